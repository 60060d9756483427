use std::path::PathBuf;

use anyhow::{Context, Result};
use log::info;

use cdiff_core::aggregate::AttentionRegistry;
use cdiff_core::data::DatasetSplit;
use cdiff_core::diffusion::{
    make_schedule, save_checkpoint, train, AggregationSettings, CDiffModel, CheckpointMeta, NeighborContext, TrainOutcome,
};
use cdiff_core::neighbors::NeighborCache;
use cdiff_core::pseudo::PseudoUserMatrix;

use super::echo_config;
use crate::config::RunConfig;
use crate::pipeline::load_prepared;

pub fn aggregation_settings(cfg: &RunConfig) -> AggregationSettings {
    if !cfg.model.aggregation {
        return AggregationSettings::disabled();
    }
    AggregationSettings { detach_neighbors: cfg.train.detach_neighbors, ..AggregationSettings::new(cfg.model.mix) }
}

pub fn init_model(cfg: &RunConfig, n_items: usize) -> Result<CDiffModel<f32>> {
    let model = CDiffModel::init(
        cfg.model.shape(n_items),
        &cfg.model.attention,
        &AttentionRegistry::with_builtins(),
        aggregation_settings(cfg),
        cfg.train.seed,
    )?;
    Ok(model)
}

/// Train a fresh model on in-memory artifacts.
pub fn fit<'a>(
    cfg: &RunConfig,
    split: &'a DatasetSplit,
    pseudo: &'a PseudoUserMatrix,
    cache: &'a NeighborCache,
) -> Result<(TrainOutcome<f32>, NeighborContext<'a>)> {
    let ctx = NeighborContext::new(&split.train, pseudo, cache);
    let schedule = make_schedule(cfg.schedule)?;
    let model = init_model(cfg, split.n_items())?;
    let outcome = train(model, split, &ctx, &schedule, &cfg.train).context("stage train")?;
    Ok((outcome, ctx))
}

pub struct TrainRun {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub outcome: TrainOutcome<f32>,
}

pub fn checkpoint_meta(cfg: &RunConfig, best_epoch: usize) -> CheckpointMeta {
    CheckpointMeta {
        n_items: 0,
        hidden: 0,
        time_dim: 0,
        schedule: cfg.schedule,
        seed: cfg.train.seed,
        config_hash: cfg.hash(),
        attention: cfg.model.attention.clone(),
        mix: cfg.model.mix,
        aggregation_enabled: cfg.model.aggregation,
        detach_neighbors: cfg.train.detach_neighbors,
        best_epoch,
        tensor_shapes: Vec::new(),
    }
}

/// `train` subcommand: writes the best-validation checkpoint, the epoch
/// history and the effective config under `output_dir/train/seed-N`.
pub fn run(cfg: &RunConfig, seed: Option<u64>) -> Result<TrainRun> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let loaded = load_prepared(&cfg)?;
    let dir = cfg.output_dir.join("train").join(format!("seed-{}", cfg.train.seed));
    echo_config(&cfg, &dir)?;
    let (outcome, _) = fit(&cfg, &loaded.split, &loaded.pseudo, &loaded.cache)?;
    let checkpoint = dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &outcome.model, &checkpoint_meta(&cfg, outcome.history.best_epoch))?;
    outcome.history.save(&dir.join("history.tsv"), cfg.train.eval_cutoff)?;
    info!(
        "trained {} epochs, best epoch {}, checkpoint {}",
        outcome.history.epochs.len(),
        outcome.history.best_epoch,
        checkpoint.display()
    );
    Ok(TrainRun { dir, checkpoint, outcome })
}
