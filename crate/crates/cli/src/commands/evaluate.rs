use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use log::{info, warn};
use ndarray::Array2;

use cdiff_core::aggregate::AttentionRegistry;
use cdiff_core::data::DatasetSplit;
use cdiff_core::diffusion::{
    infer_batch, load_checkpoint, make_schedule, CDiffModel, DiffusionSchedule, InferenceConfig, NeighborContext,
};
use cdiff_core::eval::{evaluable_users, evaluate_users, EvalTarget, RankingMetrics};
use cdiff_core::hashing::write_atomic;

use super::echo_config;
use crate::config::RunConfig;
use crate::pipeline::load_prepared;

/// Produces one score row per requested user.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;
    fn scores(&self, users: &[usize], ctx: &NeighborContext) -> Array2<f32>;
}

pub struct ModelScorer {
    pub model: CDiffModel<f32>,
    pub schedule: DiffusionSchedule,
    pub inference: InferenceConfig,
}

impl Scorer for ModelScorer {
    fn n_items(&self) -> usize {
        self.model.n_items()
    }

    fn scores(&self, users: &[usize], ctx: &NeighborContext) -> Array2<f32> {
        infer_batch(&self.model, users, ctx, &self.schedule, &self.inference)
    }
}

/// Scores every test item 1 and everything else 0.
pub struct OracleScorer<'a> {
    pub split: &'a DatasetSplit,
}

impl Scorer for OracleScorer<'_> {
    fn n_items(&self) -> usize {
        self.split.n_items()
    }

    fn scores(&self, users: &[usize], _: &NeighborContext) -> Array2<f32> {
        let mut out = Array2::zeros((users.len(), self.split.n_items()));
        for (r, &u) in users.iter().enumerate() {
            for &i in self.split.test.row(u) {
                out[[r, i as usize]] = 1.0;
            }
        }
        out
    }
}

/// Test-set metrics of `scorer` over every evaluable user.
pub fn evaluate_scorer(
    scorer: &dyn Scorer,
    split: &DatasetSplit,
    ctx: &NeighborContext,
    cutoffs: &[usize],
) -> Result<RankingMetrics> {
    if scorer.n_items() != split.n_items() {
        bail!("dimension mismatch: scorer covers {} items, split has {}", scorer.n_items(), split.n_items());
    }
    let users = evaluable_users(split, EvalTarget::Test);
    let scores = scorer.scores(&users, ctx);
    Ok(evaluate_users(&users, scores.view(), split, EvalTarget::Test, cutoffs)?)
}

pub struct EvalRun {
    pub dir: PathBuf,
    pub metrics: RankingMetrics,
}

/// Directory evaluation outputs for `checkpoint` go to.
pub fn eval_dir(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join("eval")
}

pub fn write_metrics(dir: &Path, metrics: &RankingMetrics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("metrics.tsv"), metrics.report().as_bytes())?;
    write_atomic(&dir.join("per_user.tsv"), metrics.per_user_dump().as_bytes())?;
    Ok(())
}

/// `evaluate` subcommand. Inference uses the checkpoint's schedule and the
/// config's `t_infer`, placement and seed.
pub fn run(cfg: &RunConfig, checkpoint: &Path, cutoffs: Option<Vec<usize>>) -> Result<EvalRun> {
    let mut cfg = cfg.clone();
    if let Some(c) = cutoffs {
        cfg.eval.cutoffs = c;
        cfg.validate()?;
    }
    let loaded = load_prepared(&cfg)?;
    let (model, meta) = load_checkpoint::<f32>(checkpoint, &AttentionRegistry::with_builtins())?;
    if meta.config_hash != cfg.hash() {
        warn!("checkpoint {} was trained under a different configuration", checkpoint.display());
    }
    let schedule = make_schedule(meta.schedule)?;
    if cfg.train.t_infer > schedule.steps() {
        bail!("train.t_infer = {} exceeds the checkpoint's T = {}", cfg.train.t_infer, schedule.steps());
    }
    let scorer = ModelScorer { model, schedule, inference: cfg.train.inference() };
    let ctx = NeighborContext::new(&loaded.split.train, &loaded.pseudo, &loaded.cache);
    let metrics = evaluate_scorer(&scorer, &loaded.split, &ctx, &cfg.eval.cutoffs)?;
    let dir = eval_dir(checkpoint);
    echo_config(&cfg, &dir)?;
    write_metrics(&dir, &metrics)?;
    info!("evaluated {} users, outputs in {}", metrics.n_evaluable, dir.display());
    Ok(EvalRun { dir, metrics })
}
