#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cdiff_cli::commands::synth;
use cdiff_cli::config::RunConfig;
use cdiff_core::synth::SyntheticSpec;

pub const SMALL: &str = r#"
output_dir = "run"

[data]
ratings = "data/ratings.tsv"
reviews = "data/reviews.tsv"

[pseudo]
n = 40

[neighbors]
k = 4

[model]
hidden = 32

[train]
max_epochs = 3
batch_size = 16
patience = 0
"#;

/// Write a synthetic dataset and a config file under `dir` and load it
/// with `overrides`.
pub fn setup(dir: &Path, spec: &SyntheticSpec, config: &str, overrides: &[&str]) -> (PathBuf, RunConfig) {
    synth::run(spec, &dir.join("data")).unwrap();
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    let cfg = load(&path, overrides);
    (path, cfg)
}

pub fn load(path: &Path, overrides: &[&str]) -> RunConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::load(path, &overrides).unwrap()
}

pub fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(40, 30, 2, 12, 60, 0.9, seed)
}
