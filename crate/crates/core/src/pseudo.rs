//! Pseudo-users: each review word becomes a "user" whose interaction vector
//! is its TF-IDF weight on every item, min-max scaled into [0, 1].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::hashing::{write_atomic, ContentHasher};

/// Term-frequency variant. Only raw counts are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TfMode {
    #[default]
    RawCount,
}

/// TF-IDF with raw tf and smoothed idf `ln((1+|I|)/(1+df)) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TfidfConfig {
    #[serde(default)]
    pub tf_mode: TfMode,
}

impl TfidfConfig {
    pub fn idf(&self, n_items: usize, doc_freq: usize) -> f64 {
        ((1.0 + n_items as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
    }
}

/// Sparse TF-IDF weights with the same sparsity pattern as the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfMatrix {
    n_items: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl TfidfMatrix {
    pub fn n_features(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, feature: usize) -> &[(u32, f64)] {
        &self.rows[feature]
    }

    pub fn get(&self, feature: usize, item: u32) -> f64 {
        let row = &self.rows[feature];
        row.binary_search_by_key(&item, |&(i, _)| i).map(|k| row[k].1).unwrap_or(0.0)
    }

    pub fn dense_row(&self, feature: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_items];
        for &(i, v) in &self.rows[feature] {
            out[i as usize] = v;
        }
        out
    }

    /// Mean weight of a feature over all items (zeros included).
    pub fn average(&self, feature: usize) -> f64 {
        if self.n_items == 0 {
            return 0.0;
        }
        self.rows[feature].iter().map(|&(_, v)| v).sum::<f64>() / self.n_items as f64
    }
}

pub fn tfidf(features: &FeatureMatrix, config: &TfidfConfig) -> TfidfMatrix {
    let n_items = features.n_items();
    let rows = (0..features.n_features())
        .map(|f| {
            let idf = config.idf(n_items, features.doc_freq(f));
            let tf = |c: u32| match config.tf_mode {
                TfMode::RawCount => c as f64,
            };
            features.row(f).iter().map(|&(i, c)| (i, tf(c) * idf)).collect()
        })
        .collect();
    TfidfMatrix { n_items, rows }
}

/// In-place `(x - min) / (max - min)`; a constant row becomes all zeros.
pub fn minmax_row(row: &mut [f64]) {
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if row.is_empty() || hi <= lo {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let span = hi - lo;
    for x in row.iter_mut() {
        *x = ((*x - lo) / span).clamp(0.0, 1.0);
    }
}

/// Dense pseudo-user vectors, one row per selected review word.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoUserMatrix {
    n_items: usize,
    data: Vec<f32>,
    source_feature: Vec<u32>,
    tokens: Vec<String>,
    vocab_hash: u64,
}

/// Min-max scale each row of `rows` and pack the result as pseudo-users.
pub fn minmax_rows(
    rows: Vec<Vec<f64>>,
    n_items: usize,
    source_feature: Vec<u32>,
    tokens: Vec<String>,
    vocab_hash: u64,
) -> Result<PseudoUserMatrix> {
    if rows.len() != source_feature.len() || rows.len() != tokens.len() {
        return Err(Error::Dimension("pseudo-user rows, sources and tokens differ in length".into()));
    }
    let mut data = Vec::with_capacity(rows.len() * n_items);
    for mut row in rows {
        if row.len() != n_items {
            return Err(Error::Dimension(format!("row length {} != n_items {n_items}", row.len())));
        }
        minmax_row(&mut row);
        data.extend(row.iter().map(|&x| x as f32));
    }
    Ok(PseudoUserMatrix { n_items, data, source_feature, tokens, vocab_hash })
}

/// Average-TF-IDF score of every feature.
pub fn average_tfidf(weights: &TfidfMatrix) -> Vec<f64> {
    (0..weights.n_features()).map(|f| weights.average(f)).collect()
}

/// Indices of the `n` features with the largest average TF-IDF, best first;
/// ties go to the lower feature index.
pub fn select_pseudo_users(features: &FeatureMatrix, config: &TfidfConfig, n: usize) -> Vec<usize> {
    assert!(n >= 1, "pseudo-user count must be at least 1");
    rank_by_score(&average_tfidf(&tfidf(features, config)), n)
}

fn rank_by_score(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Select the top-`n` words and build their pseudo-user vectors.
pub fn build_pseudo_users(features: &FeatureMatrix, config: &TfidfConfig, n: usize) -> Result<PseudoUserMatrix> {
    let weights = tfidf(features, config);
    let selected = rank_by_score(&average_tfidf(&weights), n);
    let rows = selected.iter().map(|&f| weights.dense_row(f)).collect();
    let tokens = selected.iter().map(|&f| features.vocab()[f].clone()).collect();
    let sources = selected.iter().map(|&f| f as u32).collect();
    minmax_rows(rows, features.n_items(), sources, tokens, features.vocab_hash())
}

const PSEUDO_MAGIC: &[u8; 4] = b"CDPU";
const PSEUDO_VERSION: u32 = 1;

impl PseudoUserMatrix {
    pub fn n_pseudo(&self) -> usize {
        self.source_feature.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * self.n_items..(p + 1) * self.n_items]
    }

    pub fn source_feature(&self) -> &[u32] {
        &self.source_feature
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn content_hash(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.str("pseudo-users")
            .u64(self.n_pseudo() as u64)
            .u64(self.n_items as u64)
            .u64(self.vocab_hash);
        for &s in &self.source_feature {
            h.u32(s);
        }
        for &x in &self.data {
            h.f32(x);
        }
        h.finish()
    }

    /// Binary matrix file plus a sidecar listing the selected tokens in
    /// rank order, one per line.
    pub fn save(&self, path: &Path, tokens_path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 4 * (self.data.len() + self.n_pseudo()));
        buf.extend_from_slice(PSEUDO_MAGIC);
        buf.extend_from_slice(&PSEUDO_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_pseudo() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_items as u64).to_le_bytes());
        buf.extend_from_slice(&self.vocab_hash.to_le_bytes());
        for &s in &self.source_feature {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut side = String::new();
        for t in &self.tokens {
            side.push_str(t);
            side.push('\n');
        }
        write_atomic(path, &buf)?;
        write_atomic(tokens_path, side.as_bytes())
    }

    pub fn load(path: &Path, tokens_path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != PSEUDO_MAGIC {
            return Err(Error::format(path, "not a pseudo-user matrix"));
        }
        if r.u32()? != PSEUDO_VERSION {
            return Err(Error::format(path, "unsupported version"));
        }
        let n_pseudo = r.u64()? as usize;
        let n_items = r.u64()? as usize;
        let vocab_hash = r.u64()?;
        let source_feature = (0..n_pseudo).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let data = (0..n_pseudo * n_items).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let text = std::fs::read_to_string(tokens_path).map_err(|e| Error::io(tokens_path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.len() != n_pseudo {
            return Err(Error::format(tokens_path, format!("{} tokens for {n_pseudo} pseudo-users", tokens.len())));
        }
        Ok(Self { n_items, data, source_feature, tokens, vocab_hash })
    }
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(n_items: usize, rows: Vec<Vec<(u32, u32)>>) -> FeatureMatrix {
        let vocab = (0..rows.len()).map(|k| format!("w{k}")).collect();
        FeatureMatrix::from_rows(n_items, vocab, rows).unwrap()
    }

    #[test]
    fn tfidf_hand_values() {
        // counts (2, 0) over two items: idf = ln(3/2) + 1
        let w = tfidf(&fm(2, vec![vec![(0, 2)]]), &TfidfConfig::default());
        let idf = (1.5f64).ln() + 1.0;
        assert!((idf - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert!((w.get(0, 0) - 2.0 * idf).abs() < 1e-12);
        assert!((w.get(0, 0) - 2.810_930_216_216_329).abs() < 1e-9);
        assert_eq!(w.get(0, 1), 0.0);

        // present in every item: idf = 1
        let w = tfidf(&fm(3, vec![vec![(0, 1), (1, 4), (2, 2)]]), &TfidfConfig::default());
        assert_eq!(w.dense_row(0), vec![1.0, 4.0, 2.0]);

        let w = tfidf(&fm(3, vec![vec![]]), &TfidfConfig::default());
        assert_eq!(w.dense_row(0), vec![0.0; 3]);
    }

    #[test]
    fn minmax_examples() {
        let mut r = vec![0.0, 5.0, 10.0];
        minmax_row(&mut r);
        assert_eq!(r, vec![0.0, 0.5, 1.0]);
        let mut r = vec![3.0; 3];
        minmax_row(&mut r);
        assert_eq!(r, vec![0.0; 3]);
        let mut r = vec![2.811, 0.0];
        minmax_row(&mut r);
        assert_eq!(r, vec![1.0, 0.0]);
    }

    #[test]
    fn selection_order_and_ties() {
        // avg tf-idf ordering follows total weight here; w1 and w2 tie exactly
        let f = fm(4, vec![vec![(0, 1)], vec![(0, 3), (1, 3)], vec![(2, 3), (3, 3)], vec![(1, 9)]]);
        let all = select_pseudo_users(&f, &TfidfConfig::default(), 10);
        assert_eq!(all.len(), 4);
        assert_eq!(&all[..], &[3, 1, 2, 0]);
        assert_eq!(select_pseudo_users(&f, &TfidfConfig::default(), 1), vec![3]);
    }

    #[test]
    fn persist_roundtrip() {
        let f = fm(3, vec![vec![(0, 2), (2, 1)], vec![(1, 1)]]);
        let p = build_pseudo_users(&f, &TfidfConfig::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("p.bin"), dir.path().join("p.txt"));
        p.save(&a, &b).unwrap();
        let q = PseudoUserMatrix::load(&a, &b).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.content_hash(), q.content_hash());
    }

    fn arb_counts() -> impl Strategy<Value = FeatureMatrix> {
        (1usize..12, 1usize..15).prop_flat_map(|(nf, ni)| {
            proptest::collection::vec(proptest::collection::vec(0u32..6, ni), nf).prop_map(move |dense| {
                let rows = dense
                    .iter()
                    .map(|r| r.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect())
                    .collect();
                fm(ni, rows)
            })
        })
    }

    proptest! {
        #[test]
        fn pseudo_entries_in_unit_interval(f in arb_counts()) {
            let p = build_pseudo_users(&f, &TfidfConfig::default(), f.n_features()).unwrap();
            for k in 0..p.n_pseudo() {
                let row = p.row(k);
                prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                let max = row.iter().cloned().fold(0.0f32, f32::max);
                prop_assert!(max == 1.0 || row.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn tfidf_keeps_sparsity(f in arb_counts()) {
            let w = tfidf(&f, &TfidfConfig::default());
            for k in 0..f.n_features() {
                for i in 0..f.n_items() as u32 {
                    prop_assert_eq!(w.get(k, i) == 0.0, f.count(k, i) == 0);
                }
            }
        }

        #[test]
        fn minmax_idempotent(mut r in proptest::collection::vec(0.0f64..1.0, 2..20)) {
            r[0] = 0.0;
            r[1] = 1.0;
            let mut s = r.clone();
            minmax_row(&mut s);
            prop_assert_eq!(s, r);
        }

        #[test]
        fn low_scoring_feature_does_not_change_selection(f in arb_counts(), n in 1usize..5) {
            let before = select_pseudo_users(&f, &TfidfConfig::default(), n);
            // an extra feature with no counts has average 0, the minimum possible
            let mut rows: Vec<Vec<(u32, u32)>> = (0..f.n_features()).map(|k| f.row(k).to_vec()).collect();
            rows.push(vec![]);
            let g = fm(f.n_items(), rows);
            let after = select_pseudo_users(&g, &TfidfConfig::default(), n);
            if n <= f.n_features() {
                prop_assert_eq!(before, after);
            }
        }
    }
}
