//! Mini-batch training with AdamW and early stopping on validation recall.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::diffusion::infer::{infer_batch, AggregationPlacement, InferenceConfig};
use crate::diffusion::model::{prepare_batch, CDiffModel, NeighborContext};
use crate::diffusion::optim::{AdamW, AdamWConfig};
use crate::diffusion::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::eval::{evaluable_users, evaluate_users, EvalTarget};
use crate::hashing::write_atomic;
use crate::real::Real;
use crate::rng::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub t_infer: usize,
    pub placement: AggregationPlacement,
    pub detach_neighbors: bool,
    /// Cutoff of the validation recall driving early stopping.
    pub eval_cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 0.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            t_infer: 0,
            placement: AggregationPlacement::EveryStep,
            detach_neighbors: false,
            eval_cutoff: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, schedule_steps: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_cutoff == 0 {
            return Err(Error::Config("batch_size, max_epochs and eval_cutoff must be at least 1".into()));
        }
        if self.t_infer > schedule_steps {
            return Err(Error::Config(format!("t_infer {} exceeds T = {schedule_steps}", self.t_infer)));
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig { t_infer: self.t_infer, placement: self.placement, seed: self.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when no user has validation items.
    pub val_recall: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// `epoch<TAB>train_loss<TAB>val_recall@k<TAB>val_ndcg@k`.
    pub fn to_tsv(&self, cutoff: usize) -> String {
        let mut out = format!("epoch\ttrain_loss\tval_recall@{cutoff}\tval_ndcg@{cutoff}\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{}\t{:.9e}\t{:.8}\t{:.8}", r.epoch, r.train_loss, r.val_recall, r.val_ndcg);
        }
        out
    }

    pub fn save(&self, path: &Path, cutoff: usize) -> Result<()> {
        write_atomic(path, self.to_tsv(cutoff).as_bytes())
    }
}

pub struct TrainOutcome<F: Real> {
    /// Parameters from the epoch with the best validation recall.
    pub model: CDiffModel<F>,
    /// Parameters after the last epoch run.
    pub last: CDiffModel<F>,
    pub history: TrainHistory,
}

/// Train `model` on the train rows of `split`.
///
/// Every epoch shuffles the trainable users (non-empty train rows) and walks
/// them in batches; batch `b` of epoch `e` draws its timesteps and query
/// noise from one stream and its neighbor noise from another, both keyed by
/// `(seed, e, b)`.
pub fn train<F: Real>(
    mut model: CDiffModel<F>,
    split: &DatasetSplit,
    ctx: &NeighborContext,
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    config.validate(schedule.steps())?;
    if ctx.train != &split.train {
        return Err(Error::Dimension("neighbor context was not built on this train split".into()));
    }
    model.aggregation.detach_neighbors = config.detach_neighbors;
    let mut users: Vec<usize> = (0..split.n_users()).filter(|&u| !split.train.row(u).is_empty()).collect();
    if users.is_empty() {
        return Err(Error::Empty("train split has no interactions".into()));
    }
    let val_users = evaluable_users(split, EvalTarget::Validation);
    let mut optimizer = AdamW::<F>::new(AdamWConfig::new(config.learning_rate, config.weight_decay));
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, CDiffModel<F>)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        users.sort_unstable();
        users.shuffle(&mut stage_rng(config.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (b, batch_users) in users.chunks(config.batch_size).enumerate() {
            let stream = ((epoch as u64) << 32) | b as u64;
            let mut query_rng = stage_rng(config.seed, "train-query", stream);
            let mut neighbor_rng = stage_rng(config.seed, "train-neighbors", stream);
            let batch = prepare_batch::<F, _>(
                batch_users,
                &model.aggregation,
                ctx,
                schedule,
                &mut query_rng,
                &mut neighbor_rng,
            );
            let (loss, grads) = model.batch_objective(&batch, schedule, true);
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = grads.expect("gradients requested");
            optimizer.step(model.param_slices_mut(), grads.slices());
            if !model.params_finite() {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            history.step_losses.push(loss);
            loss_sum += loss;
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches as f64;

        let (val_recall, val_ndcg) = if val_users.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let scores = infer_batch(&model, &val_users, ctx, schedule, &config.inference());
            let m = evaluate_users(&val_users, scores.view(), split, EvalTarget::Validation, &[config.eval_cutoff])?;
            (m.mean_recall[0], m.mean_ndcg[0])
        };
        history.epochs.push(EpochRecord { epoch, train_loss, val_recall, val_ndcg });
        debug!("epoch {epoch}: loss {train_loss:.6} val R@{} {val_recall:.4}", config.eval_cutoff);

        let improved = match &best {
            None => true,
            Some((r, _)) => val_recall > *r || val_recall.is_nan(),
        };
        if improved {
            best = Some((val_recall, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                info!("early stop after epoch {epoch}, best epoch {}", history.best_epoch);
                break;
            }
        }
    }
    let best_model = best.map(|(_, m)| m).expect("at least one epoch");
    Ok(TrainOutcome { model: best_model, last: model, history })
}
