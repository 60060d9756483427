use std::path::Path;

use anyhow::{Context, Result};
use log::info;

use cdiff_core::synth::{write_dataset, SyntheticFiles, SyntheticSpec};

pub fn load_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    let spec: SyntheticSpec = toml::from_str(&text).with_context(|| format!("invalid spec {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

/// `synth` subcommand: ratings.tsv, reviews.tsv and a copy of the generator settings under `out`.
pub fn run(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticFiles> {
    let files = write_dataset(spec, out)?;
    std::fs::write(out.join("spec.toml"), toml::to_string(spec)?)?;
    info!("wrote {} and {}", files.ratings.display(), files.reviews.display());
    Ok(files)
}
