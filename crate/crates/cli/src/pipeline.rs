//! Data, pseudo-user and neighbor stages, and the prepared-artifact layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use cdiff_core::data::{
    binarize, build_feature_matrix, build_vocab, load_ratings, load_reviews, split_per_user, DatasetSplit, FeatureMatrix,
    IdMap,
};
use cdiff_core::hashing::{file_sha256, sha256_hex, write_atomic};
use cdiff_core::neighbors::{build_cache, NeighborCache};
use cdiff_core::pseudo::{build_pseudo_users, PseudoUserMatrix};

use crate::config::{DataConfig, RunConfig};

/// Ratings split per user plus the review-word count matrix.
pub struct Dataset {
    pub users: IdMap,
    pub items: IdMap,
    pub split: DatasetSplit,
    pub features: FeatureMatrix,
}

pub fn load_dataset(cfg: &DataConfig) -> Result<Dataset> {
    let table = load_ratings(&cfg.ratings, cfg.format).context("stage data")?;
    let matrix = binarize(&table.records, table.n_users(), table.n_items(), cfg.threshold);
    let split = split_per_user(&matrix, cfg.fractions, cfg.split_seed).context("stage data")?;
    let corpus = load_reviews(&cfg.reviews, cfg.format, &table.items).context("stage data")?;
    let vocab = build_vocab(&corpus);
    let features = build_feature_matrix(&corpus, &vocab).context("stage data")?;
    info!(
        "data: {} users, {} items, {} interactions, {} words",
        split.n_users(),
        split.n_items(),
        matrix.nnz(),
        features.n_features()
    );
    Ok(Dataset { users: table.users, items: table.items, split, features })
}

/// Everything training and evaluation read.
pub struct Prepared {
    pub dataset: Dataset,
    pub pseudo: PseudoUserMatrix,
    pub cache: NeighborCache,
}

pub fn build(cfg: &RunConfig) -> Result<Prepared> {
    let dataset = load_dataset(&cfg.data)?;
    let pseudo = build_pseudo_users(&dataset.features, &cfg.pseudo.tfidf, cfg.pseudo.n).context("stage pseudo")?;
    info!("pseudo: {} pseudo-users", pseudo.n_pseudo());
    let cache = build_cache(&dataset.split.train, &pseudo, cfg.neighbors.k).context("stage neighbors")?;
    Ok(Prepared { dataset, pseudo, cache })
}

/// File names inside a prepared-artifact directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub const MANIFEST: &'static str = "manifest.tsv";
    pub const FILES: [&'static str; 6] = ["users.tsv", "items.tsv", "split.tsv", "pseudo.bin", "pseudo_tokens.txt", "neighbors.bin"];

    pub fn for_run(cfg: &RunConfig) -> Self {
        Self { dir: cfg.output_dir.join("prepare") }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.path(Self::MANIFEST)
    }
}

/// Hash of the settings that determine the prepared artifacts.
pub fn prepare_key(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{}|{}|{}",
        toml::to_string(&cfg.data).unwrap(),
        toml::to_string(&cfg.pseudo).unwrap(),
        toml::to_string(&cfg.neighbors).unwrap()
    );
    sha256_hex(s.as_bytes())
}

fn write_artifacts(p: &Prepared, dir: &Path) -> Result<()> {
    let l = Layout { dir: dir.to_path_buf() };
    let header = p.dataset.split.header();
    p.dataset.users.save(&l.path("users.tsv"), &header)?;
    p.dataset.items.save(&l.path("items.tsv"), &header)?;
    p.dataset.split.save(&l.path("split.tsv"))?;
    p.pseudo.save(&l.path("pseudo.bin"), &l.path("pseudo_tokens.txt"))?;
    p.cache.save(&l.path("neighbors.bin"))?;
    Ok(())
}

/// `# key=...` header, then `kind<TAB>path<TAB>sha256` lines for the inputs
/// and every artifact.
fn manifest_text(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let mut out = format!("# cdiff manifest key={}\n", prepare_key(cfg));
    for input in [&cfg.data.ratings, &cfg.data.reviews] {
        let _ = writeln!(out, "input\t{}\t{}", input.display(), file_sha256(input)?);
    }
    for name in Layout::FILES {
        let _ = writeln!(out, "artifact\t{name}\t{}", file_sha256(&dir.join(name))?);
    }
    Ok(out)
}

/// Run the data, pseudo and neighbor stages and write the artifacts and
/// manifest. Outputs are staged in a sibling directory and moved into
/// place only when every stage succeeded.
pub fn prepare(cfg: &RunConfig) -> Result<Layout> {
    let layout = Layout::for_run(cfg);
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let staging = cfg.output_dir.join(format!(".prepare.staging-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&staging);
    std::fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
    let staged = (|| -> Result<()> {
        let prepared = build(cfg)?;
        write_artifacts(&prepared, &staging)?;
        let manifest = manifest_text(cfg, &staging)?;
        write_atomic(&staging.join(Layout::MANIFEST), manifest.as_bytes())?;
        Ok(())
    })();
    if let Err(e) = staged {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    if layout.dir.exists() {
        std::fs::remove_dir_all(&layout.dir).with_context(|| format!("removing {}", layout.dir.display()))?;
    }
    std::fs::rename(&staging, &layout.dir).with_context(|| format!("moving artifacts to {}", layout.dir.display()))?;
    info!("prepared artifacts in {}", layout.dir.display());
    Ok(layout)
}

/// Check that the prepared artifacts exist, were built from the current
/// settings and inputs, and have not changed since.
pub fn verify_manifest(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let path = layout.manifest();
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `prepare` first)", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let key = header.strip_prefix("# cdiff manifest key=").context("malformed manifest header")?;
    if key != prepare_key(cfg) {
        bail!("prepared artifacts in {} were built with different data/pseudo/neighbors settings; rerun `prepare`", layout.dir.display());
    }
    for line in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        let [kind, name, expected] = fields[..] else { bail!("malformed manifest line `{line}`") };
        let file = match kind {
            "input" => PathBuf::from(name),
            "artifact" => layout.path(name),
            _ => bail!("malformed manifest line `{line}`"),
        };
        let found = file_sha256(&file)?;
        if found != expected {
            bail!("hash mismatch for {}: manifest {expected}, file {found}; rerun `prepare`", file.display());
        }
    }
    Ok(())
}

/// Prepared artifacts read back from disk after a manifest check.
pub struct Loaded {
    pub users: IdMap,
    pub items: IdMap,
    pub split: DatasetSplit,
    pub pseudo: PseudoUserMatrix,
    pub cache: NeighborCache,
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Loaded> {
    let layout = Layout::for_run(cfg);
    verify_manifest(cfg, &layout)?;
    let users = IdMap::load(&layout.path("users.tsv"))?;
    let items = IdMap::load(&layout.path("items.tsv"))?;
    let split = DatasetSplit::load(&layout.path("split.tsv"))?;
    let pseudo = PseudoUserMatrix::load(&layout.path("pseudo.bin"), &layout.path("pseudo_tokens.txt"))?;
    let cache = NeighborCache::load(&layout.path("neighbors.bin"), split.train.content_hash(), pseudo.content_hash())?;
    if split.n_items() != items.len() || split.n_users() != users.len() || pseudo.n_items() != split.n_items() {
        bail!("prepared artifacts disagree on matrix shapes");
    }
    Ok(Loaded { users, items, split, pseudo, cache })
}
