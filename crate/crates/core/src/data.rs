//! Ratings, binary interaction matrices, per-user splits and review-word
//! count matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{write_atomic, ContentHasher};
use crate::real::Real;
use crate::rng::stage_rng;

/// Column delimiter of ratings and review files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Tsv,
    Csv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Tsv => b'\t',
            Format::Csv => b',',
        }
    }

    fn reader(self) -> csv::ReaderBuilder {
        let mut b = csv::ReaderBuilder::new();
        b.has_headers(false).flexible(true).delimiter(self.delimiter());
        if self == Format::Tsv {
            b.quoting(false);
        }
        b
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRecord {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

/// Dense 0-based index assignment for string ids, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate id `{id}` in id map")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: u32) -> &str {
        &self.ids[index as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Two-column `index<TAB>id` file with a one-line `#` header.
    pub fn save(&self, path: &Path, header: &str) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# {header}\n"));
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&format!("{i}\t{id}\n"));
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let (idx, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: "expected `index<TAB>id`".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("bad index `{idx}`"),
            })?;
            if idx != ids.len() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("index {idx} out of order"),
                });
            }
            ids.push(id.to_owned());
        }
        Self::from_ids(ids)
    }
}

/// Parsed ratings with their id maps.
#[derive(Debug, Clone, Default)]
pub struct RatingsTable {
    pub records: Vec<RatingRecord>,
    pub users: IdMap,
    pub items: IdMap,
}

impl RatingsTable {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

/// Read `user, item, rating` lines. String ids are remapped to dense indices.
pub fn load_ratings(path: &Path, format: Format) -> Result<RatingsTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = format.reader().from_reader(file);
    let mut table = RatingsTable::default();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |msg: String| Error::Parse { path: path.into(), line, msg };
        if rec.len() < 3 {
            return Err(parse_err(format!("expected 3 columns, found {}", rec.len())));
        }
        let rating: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("rating `{}` is not a number", &rec[2])))?;
        if !rating.is_finite() {
            return Err(parse_err(format!("rating `{}` is not finite", &rec[2])));
        }
        let user = table.users.intern(rec[0].trim());
        let item = table.items.intern(rec[1].trim());
        table.records.push(RatingRecord { user, item, rating });
    }
    Ok(table)
}

/// Sparse binary user × item matrix. Each row holds the sorted item indices
/// whose entry is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self { n_users, n_items, rows: vec![Vec::new(); n_users] }
    }

    /// Build from per-user item lists; items are sorted and deduplicated.
    pub fn from_rows(n_items: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= n_items {
                    return Err(Error::Dimension(format!(
                        "user {u} has item {last} but n_items = {n_items}"
                    )));
                }
            }
        }
        Ok(Self { n_users: rows.len(), n_items, rows })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    pub fn dense_row<F: Real>(&self, user: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.n_items];
        self.fill_dense_row(user, &mut out);
        out
    }

    /// Overwrite `out` (length `n_items`) with the 0/1 row of `user`.
    pub fn fill_dense_row<F: Real>(&self, user: usize, out: &mut [F]) {
        assert_eq!(out.len(), self.n_items, "dense row length mismatch");
        out.iter_mut().for_each(|x| *x = F::zero());
        for &i in &self.rows[user] {
            out[i as usize] = F::one();
        }
    }

    /// Item → users inverted index.
    pub fn transpose_rows(&self) -> Vec<Vec<u32>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for (u, row) in self.rows.iter().enumerate() {
            for &i in row {
                cols[i as usize].push(u as u32);
            }
        }
        cols
    }

    pub fn content_hash(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.str("interaction-matrix").u64(self.n_users as u64).u64(self.n_items as u64);
        for row in &self.rows {
            h.u64(row.len() as u64);
            for &i in row {
                h.u32(i);
            }
        }
        h.finish()
    }
}

/// Entry (u,i) is 1 iff the maximum rating recorded for (u,i) is at least
/// `threshold`.
pub fn binarize(
    records: &[RatingRecord],
    n_users: usize,
    n_items: usize,
    threshold: f64,
) -> InteractionMatrix {
    let mut best: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for r in records {
        best.entry((r.user, r.item))
            .and_modify(|v| *v = v.max(r.rating))
            .or_insert(r.rating);
    }
    let mut rows = vec![Vec::new(); n_users];
    for ((u, i), r) in best {
        assert!((u as usize) < n_users && (i as usize) < n_items, "record outside matrix shape");
        if r >= threshold {
            rows[u as usize].push(i);
        }
    }
    InteractionMatrix { n_users, n_items, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("split fractions must be non-negative: {self}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {self}")));
        }
        Ok(())
    }

    /// Floor allocation of `n` items: (train, val, test), remainder to train.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

impl fmt::Display for SplitFractions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

/// Per-user disjoint train / validation / test interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub val: InteractionMatrix,
    pub test: InteractionMatrix,
    pub seed: u64,
    pub fractions: SplitFractions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Shuffle each user's items with a seeded per-user stream, give the first
/// ⌊val·n⌋ to validation, the next ⌊test·n⌋ to test and the rest to train.
pub fn split_per_user(
    matrix: &InteractionMatrix,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    fractions.validate()?;
    let n_users = matrix.n_users();
    let mut train = Vec::with_capacity(n_users);
    let mut val = Vec::with_capacity(n_users);
    let mut test = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut items = matrix.row(u).to_vec();
        let mut rng = stage_rng(seed, "split", u as u64);
        items.shuffle(&mut rng);
        let (_, n_val, n_test) = fractions.allocate(items.len());
        val.push(items[..n_val].to_vec());
        test.push(items[n_val..n_val + n_test].to_vec());
        train.push(items[n_val + n_test..].to_vec());
    }
    let n_items = matrix.n_items();
    Ok(DatasetSplit {
        train: InteractionMatrix::from_rows(n_items, train)?,
        val: InteractionMatrix::from_rows(n_items, val)?,
        test: InteractionMatrix::from_rows(n_items, test)?,
        seed,
        fractions,
    })
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    pub fn header(&self) -> String {
        format!("seed={} fractions={}", self.seed, self.fractions)
    }

    /// `user<TAB>item<TAB>part` lines (dense indices), `#` header first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "# {} n_users={} n_items={}\n",
            self.header(),
            self.n_users(),
            self.n_items()
        );
        for u in 0..self.n_users() {
            for (part, m) in [(Part::Train, &self.train), (Part::Val, &self.val), (Part::Test, &self.test)] {
                for &i in m.row(u) {
                    out.push_str(&format!("{u}\t{i}\t{}\n", part.as_str()));
                }
            }
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(path, "empty split file"))?;
        let kv: HashMap<&str, &str> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|t| t.split_once('='))
            .collect();
        let field = |k: &str| kv.get(k).copied().ok_or_else(|| Error::format(path, format!("header missing `{k}`")));
        let seed: u64 = field("seed")?.parse().map_err(|_| Error::format(path, "bad seed"))?;
        let n_users: usize = field("n_users")?.parse().map_err(|_| Error::format(path, "bad n_users"))?;
        let n_items: usize = field("n_items")?.parse().map_err(|_| Error::format(path, "bad n_items"))?;
        let fr: Vec<f64> = field("fractions")?
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, "bad fractions"))?;
        if fr.len() != 3 {
            return Err(Error::format(path, "fractions must have three parts"));
        }
        let fractions = SplitFractions::new(fr[0], fr[1], fr[2])?;
        let mut parts = [vec![Vec::new(); n_users], vec![Vec::new(); n_users], vec![Vec::new(); n_users]];
        for (k, line) in lines.enumerate() {
            let bad = |msg: &str| Error::Parse { path: path.into(), line: k + 2, msg: msg.into() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected `user<TAB>item<TAB>part`"));
            }
            let u: usize = cols[0].parse().map_err(|_| bad("bad user index"))?;
            let i: u32 = cols[1].parse().map_err(|_| bad("bad item index"))?;
            if u >= n_users {
                return Err(bad("user index out of range"));
            }
            let slot = match cols[2] {
                "train" => 0,
                "val" => 1,
                "test" => 2,
                _ => return Err(bad("unknown part")),
            };
            parts[slot][u].push(i);
        }
        let [train, val, test] = parts;
        Ok(Self {
            train: InteractionMatrix::from_rows(n_items, train)?,
            val: InteractionMatrix::from_rows(n_items, val)?,
            test: InteractionMatrix::from_rows(n_items, test)?,
            seed,
            fractions,
        })
    }
}

/// Lowercase, split on non-alphanumeric runs, drop tokens shorter than two
/// characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Review texts grouped by dense item index.
#[derive(Debug, Clone, Default)]
pub struct ReviewCorpus {
    pub reviews: Vec<Vec<String>>,
}

impl ReviewCorpus {
    pub fn new(n_items: usize) -> Self {
        Self { reviews: vec![Vec::new(); n_items] }
    }

    pub fn n_items(&self) -> usize {
        self.reviews.len()
    }

    pub fn push(&mut self, item: u32, text: impl Into<String>) {
        self.reviews[item as usize].push(text.into());
    }
}

/// Read `item, review_text` lines. Items not present in `items` are skipped.
pub fn load_reviews(path: &Path, format: Format, items: &IdMap) -> Result<ReviewCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = format.reader().from_reader(file);
    let mut corpus = ReviewCorpus::new(items.len());
    let mut skipped = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        match items.get(rec[0].trim()) {
            Some(i) => corpus.push(i, &rec[1]),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} reviews of unknown items", path.display());
    }
    Ok(corpus)
}

/// Sorted distinct tokens of the corpus.
pub fn build_vocab(corpus: &ReviewCorpus) -> Vec<String> {
    let mut vocab: Vec<String> = corpus
        .reviews
        .iter()
        .flatten()
        .flat_map(|t| tokenize(t))
        .collect();
    vocab.sort_unstable();
    vocab.dedup();
    vocab
}

/// Review-word × item count matrix. Rows are features, stored sparse as
/// `(item, count)` pairs sorted by item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_items: usize,
    vocab: Vec<String>,
    rows: Vec<Vec<(u32, u32)>>,
}

impl FeatureMatrix {
    pub fn from_rows(n_items: usize, vocab: Vec<String>, mut rows: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        check_vocab(&vocab)?;
        if rows.len() != vocab.len() {
            return Err(Error::Dimension(format!("{} rows for {} vocab tokens", rows.len(), vocab.len())));
        }
        for row in &mut rows {
            row.retain(|&(_, c)| c > 0);
            row.sort_unstable_by_key(|&(i, _)| i);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Dimension("duplicate item in feature row".into()));
            }
            if row.last().is_some_and(|&(i, _)| i as usize >= n_items) {
                return Err(Error::Dimension("feature row item out of range".into()));
            }
        }
        Ok(Self { n_items, vocab, rows })
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn row(&self, feature: usize) -> &[(u32, u32)] {
        &self.rows[feature]
    }

    pub fn count(&self, feature: usize, item: u32) -> u32 {
        let row = &self.rows[feature];
        row.binary_search_by_key(&item, |&(i, _)| i).map(|k| row[k].1).unwrap_or(0)
    }

    /// Number of items with a nonzero count for `feature`.
    pub fn doc_freq(&self, feature: usize) -> usize {
        self.rows[feature].len()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.n_items];
        for row in &self.rows {
            for &(i, c) in row {
                sums[i as usize] += c as u64;
            }
        }
        sums
    }

    pub fn vocab_hash(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.str("vocab").u64(self.vocab.len() as u64);
        for t in &self.vocab {
            h.str(t);
        }
        h.finish()
    }
}

fn check_vocab(vocab: &[String]) -> Result<()> {
    let mut seen = HashMap::with_capacity(vocab.len());
    for (k, t) in vocab.iter().enumerate() {
        if let Some(prev) = seen.insert(t.as_str(), k) {
            return Err(Error::Config(format!("duplicate vocab token `{t}` at {prev} and {k}")));
        }
    }
    Ok(())
}

/// Count occurrences of each vocab token across all reviews of each item.
pub fn build_feature_matrix(corpus: &ReviewCorpus, vocab: &[String]) -> Result<FeatureMatrix> {
    check_vocab(vocab)?;
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(k, t)| (t.as_str(), k)).collect();
    let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); vocab.len()];
    for (item, reviews) in corpus.reviews.iter().enumerate() {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for tok in reviews.iter().flat_map(|t| tokenize(t)) {
            if let Some(&f) = index.get(tok.as_str()) {
                *counts.entry(f).or_default() += 1;
            }
        }
        for (f, c) in counts {
            rows[f].push((item as u32, c));
        }
    }
    Ok(FeatureMatrix { n_items: corpus.n_items(), vocab: vocab.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.tsv", "a\tx\t5\nb\ty\t4\na\ty\t2\n");
        let t = load_ratings(&p, Format::Tsv).unwrap();
        assert_eq!(t.records.len(), 3);
        assert_eq!((t.n_users(), t.n_items()), (2, 2));
        assert_eq!(t.records[2], RatingRecord { user: 0, item: 1, rating: 2.0 });
    }

    #[test]
    fn load_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "a,x,5\nb,x,1\n");
        let t = load_ratings(&p, Format::Csv).unwrap();
        assert_eq!((t.n_users(), t.n_items()), (2, 1));
    }

    #[test]
    fn malformed_rating_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.tsv", "u1\ti1\tabc\n");
        let err = load_ratings(&p, Format::Tsv).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
        let p = write(&dir, "r2.tsv", "u1\ti1\t5\nu2\ti2\n");
        match load_ratings(&p, Format::Tsv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.tsv", "");
        assert!(load_ratings(&p, Format::Tsv).unwrap().records.is_empty());
    }

    #[test]
    fn binarize_threshold_and_duplicates() {
        let recs = [
            RatingRecord { user: 0, item: 0, rating: 5.0 },
            RatingRecord { user: 0, item: 1, rating: 3.0 },
            RatingRecord { user: 1, item: 1, rating: 2.0 },
            RatingRecord { user: 1, item: 1, rating: 4.0 },
            RatingRecord { user: 1, item: 0, rating: 4.0 },
            RatingRecord { user: 1, item: 0, rating: 5.0 },
        ];
        let m = binarize(&recs, 2, 2, 4.0);
        assert_eq!(m.row(0), &[0]);
        assert_eq!(m.row(1), &[0, 1]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(binarize(&[], 3, 4, 4.0), InteractionMatrix::empty(3, 4));
    }

    #[test]
    fn split_sizes() {
        let m = InteractionMatrix::from_rows(20, vec![(0..10).collect(), vec![3], vec![]]).unwrap();
        let s = split_per_user(&m, SplitFractions::default(), 1).unwrap();
        let sizes = |u| (s.train.row(u).len(), s.val.row(u).len(), s.test.row(u).len());
        assert_eq!(sizes(0), (8, 1, 1));
        assert_eq!(sizes(1), (1, 0, 0));
        assert_eq!(sizes(2), (0, 0, 0));
    }

    #[test]
    fn allocate_floor_is_robust_to_rounding() {
        let f = SplitFractions::default();
        for n in 0..200 {
            let (tr, va, te) = f.allocate(n);
            assert_eq!(va, n / 10);
            assert_eq!(te, n / 10);
            assert_eq!(tr + va + te, n);
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(SplitFractions::new(0.5, 0.1, 0.1).is_err());
        assert!(SplitFractions::new(1.2, -0.1, -0.1).is_err());
    }

    #[test]
    fn split_roundtrip_through_file() {
        let m = InteractionMatrix::from_rows(30, (0..12).map(|u| (0..(u as u32 * 2)).collect()).collect()).unwrap();
        let s = split_per_user(&m, SplitFractions::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.tsv");
        s.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        assert_eq!(DatasetSplit::load(&p).unwrap(), s);
        split_per_user(&m, SplitFractions::default(), 9).unwrap().save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn feature_counts() {
        let mut c = ReviewCorpus::new(2);
        c.push(0, "Good good game");
        c.push(1, "fun, a game!");
        let vocab = vec!["good".to_string(), "game".to_string()];
        let f = build_feature_matrix(&c, &vocab).unwrap();
        assert_eq!((f.count(0, 0), f.count(1, 0)), (2, 1));
        assert_eq!((f.count(0, 1), f.count(1, 1)), (0, 1));
        assert_eq!(f.column_sums(), vec![3, 1]);

        let empty = build_feature_matrix(&ReviewCorpus::new(5), &vocab).unwrap();
        assert_eq!(empty.n_items(), 5);
        assert_eq!(empty.column_sums(), vec![0; 5]);
    }

    #[test]
    fn tokenizer_rules() {
        let toks: Vec<_> = tokenize("It's a GREAT-game, 10/10 x").collect();
        assert_eq!(toks, vec!["it", "great", "game", "10", "10"]);
    }

    #[test]
    fn duplicate_vocab_rejected() {
        let v = vec!["a1".to_string(), "a1".to_string()];
        assert!(build_feature_matrix(&ReviewCorpus::new(1), &v).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = InteractionMatrix> {
        (1usize..30, 1usize..40).prop_flat_map(|(nu, ni)| {
            proptest::collection::vec(proptest::collection::vec(0..ni as u32, 0..ni), nu)
                .prop_map(move |rows| InteractionMatrix::from_rows(ni, rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn split_partitions_each_user(m in arb_matrix(), seed in any::<u64>()) {
            let s = split_per_user(&m, SplitFractions::default(), seed).unwrap();
            for u in 0..m.n_users() {
                let tr: HashSet<_> = s.train.row(u).iter().collect();
                let va: HashSet<_> = s.val.row(u).iter().collect();
                let te: HashSet<_> = s.test.row(u).iter().collect();
                prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
                let all: HashSet<_> = tr.union(&va).chain(te.iter()).copied().collect();
                let full: HashSet<_> = m.row(u).iter().collect();
                prop_assert_eq!(all, full);
            }
            prop_assert_eq!(s, split_per_user(&m, SplitFractions::default(), seed).unwrap());
        }

        #[test]
        fn binarize_is_idempotent(m in arb_matrix()) {
            let mut recs = Vec::new();
            for u in 0..m.n_users() {
                for i in 0..m.n_items() as u32 {
                    let rating = if m.contains(u, i) { 5.0 } else { 1.0 };
                    recs.push(RatingRecord { user: u as u32, item: i, rating });
                }
            }
            prop_assert_eq!(binarize(&recs, m.n_users(), m.n_items(), 4.0), m);
        }

        #[test]
        fn feature_column_sums_match_token_counts(
            docs in proptest::collection::vec(proptest::collection::vec(0usize..6, 0..20), 1..8)
        ) {
            let words = ["aa", "bb", "cc", "dd", "ee", "zz"];
            let vocab: Vec<String> = words[..5].iter().map(|s| s.to_string()).collect();
            let mut corpus = ReviewCorpus::new(docs.len());
            for (i, d) in docs.iter().enumerate() {
                let text: Vec<&str> = d.iter().map(|&k| words[k]).collect();
                corpus.push(i as u32, text.join(" "));
            }
            let f = build_feature_matrix(&corpus, &vocab).unwrap();
            let expected: Vec<u64> = docs.iter().map(|d| d.iter().filter(|&&k| k < 5).count() as u64).collect();
            prop_assert_eq!(f.column_sums(), expected);
        }
    }
}
