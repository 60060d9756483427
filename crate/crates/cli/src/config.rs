//! Run configuration: a TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cdiff_core::aggregate::{AttentionConfig, AttentionRegistry, MixtureWeights};
use cdiff_core::data::{Format, SplitFractions};
use cdiff_core::diffusion::{make_schedule, DenoiserShape, ScheduleParams, TrainConfig};
use cdiff_core::hashing::sha256_hex;
use cdiff_core::pseudo::TfidfConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub ratings: PathBuf,
    pub reviews: PathBuf,
    #[serde(default)]
    pub format: Format,
    #[serde(default = "DataConfig::default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub split_seed: u64,
}

impl DataConfig {
    fn default_threshold() -> f64 {
        4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoConfig {
    #[serde(default = "PseudoConfig::default_n")]
    pub n: usize,
    #[serde(default)]
    pub tfidf: TfidfConfig,
}

impl PseudoConfig {
    fn default_n() -> usize {
        1000
    }
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self { n: Self::default_n(), tfidf: TfidfConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    #[serde(default = "NeighborConfig::default_k")]
    pub k: usize,
}

impl NeighborConfig {
    fn default_k() -> usize {
        10
    }
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { k: Self::default_k() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub time_dim: usize,
    /// `false` trains the plain denoiser without any neighbor path.
    pub aggregation: bool,
    pub mix: MixtureWeights,
    pub attention: AttentionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 1000,
            time_dim: 10,
            aggregation: true,
            mix: MixtureWeights::default(),
            attention: AttentionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, n_items: usize) -> DenoiserShape {
        DenoiserShape { n_items, hidden: self.hidden, time_dim: self.time_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "EvalConfig::default_cutoffs")]
    pub cutoffs: Vec<usize>,
}

impl EvalConfig {
    fn default_cutoffs() -> Vec<usize> {
        vec![10, 20, 50, 100]
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cutoffs: Self::default_cutoffs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub pseudo: PseudoConfig,
    #[serde(default)]
    pub neighbors: NeighborConfig,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Read `path`, apply `overrides` and validate. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.output_dir, &mut self.data.ratings, &mut self.data.reviews] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.fractions.validate()?;
        if !self.data.threshold.is_finite() {
            bail!("data.threshold must be finite");
        }
        if self.pseudo.n == 0 {
            bail!("pseudo.n must be at least 1");
        }
        if self.neighbors.k == 0 {
            bail!("neighbors.k must be at least 1");
        }
        let schedule = make_schedule(self.schedule)?;
        self.model.mix.validate()?;
        if self.model.hidden == 0 {
            bail!("model.hidden must be at least 1");
        }
        let registry = AttentionRegistry::<f32>::with_builtins();
        if !registry.contains(&self.model.attention.mode) {
            let known: Vec<&str> = registry.names().collect();
            bail!("unknown attention mode `{}` (known: {})", self.model.attention.mode, known.join(", "));
        }
        if self.model.attention.mode == AttentionConfig::PARAMETRIC && self.model.attention.dim == 0 {
            bail!("model.attention.dim must be at least 1 for parametric attention");
        }
        self.train.validate(schedule.steps())?;
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            bail!("eval.cutoffs must be non-empty and positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Split fractions as given.
    pub fn fractions(&self) -> SplitFractions {
        self.data.fractions
    }
}

/// Set `a.b.c = value` in `table`. The value is parsed as a TOML value and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{part}` is not a table"),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}
