//! Reduced-step deterministic inference: corrupt a user's train row to
//! `T′`, then walk the posterior mean back to `t = 0` using the mixed
//! prediction in place of the model's x0 estimate.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{BatchBuilder, CDiffModel, NeighborContext, QuerySlot};
use crate::diffusion::schedule::{forward_sample_into, posterior_mean, DiffusionSchedule};
use crate::real::Real;
use crate::rng::{stage_rng, StageRng};

/// At which denoising steps neighbor predictions are mixed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationPlacement {
    #[default]
    EveryStep,
    /// Plain denoiser steps, mixing only at the last one.
    FinalStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub t_infer: usize,
    #[serde(default)]
    pub placement: AggregationPlacement,
    /// Seed of the corruption noise.
    pub seed: u64,
}

const CHUNK: usize = 32;

struct UserState<F: Real> {
    user: usize,
    x: Array1<F>,
    neighbor_rng: StageRng,
}

/// Inferred rows for `users`, in order. Each user has its own noise
/// streams, so the result does not depend on batching.
pub fn infer_batch<F: Real>(
    model: &CDiffModel<F>,
    users: &[usize],
    ctx: &NeighborContext,
    schedule: &DiffusionSchedule,
    config: &InferenceConfig,
) -> Array2<F> {
    assert!(
        config.t_infer <= schedule.steps(),
        "inference steps {} exceed T = {}",
        config.t_infer,
        schedule.steps()
    );
    let n_items = model.n_items();
    assert_eq!(ctx.train.n_items(), n_items, "model / data item counts");
    let rows: Vec<Vec<Array1<F>>> = users
        .par_chunks(CHUNK)
        .map(|chunk| infer_chunk(model, chunk, ctx, schedule, config))
        .collect();
    let mut out = Array2::zeros((users.len(), n_items));
    for (dst, row) in out.rows_mut().into_iter().zip(rows.iter().flatten()) {
        let mut dst = dst;
        dst.assign(row);
    }
    out
}

/// Single-user [`infer_batch`].
pub fn infer<F: Real>(
    model: &CDiffModel<F>,
    user: usize,
    ctx: &NeighborContext,
    schedule: &DiffusionSchedule,
    config: &InferenceConfig,
) -> Array1<F> {
    infer_batch(model, &[user], ctx, schedule, config).row(0).to_owned()
}

fn infer_chunk<F: Real>(
    model: &CDiffModel<F>,
    users: &[usize],
    ctx: &NeighborContext,
    schedule: &DiffusionSchedule,
    config: &InferenceConfig,
) -> Vec<Array1<F>> {
    let t_start = config.t_infer;
    let mut states: Vec<UserState<F>> = users
        .iter()
        .map(|&user| {
            let mut query_rng = stage_rng(config.seed, "infer-query", user as u64);
            let mut x = Array1::from(ctx.train.dense_row::<F>(user));
            forward_sample_into(x.as_slice_mut().unwrap(), t_start, schedule, &mut query_rng);
            UserState { user, x, neighbor_rng: stage_rng(config.seed, "infer-neighbors", user as u64) }
        })
        .collect();
    let steps: Vec<usize> = if t_start == 0 { vec![0] } else { (1..=t_start).rev().collect() };
    let last = *steps.last().unwrap();
    for &t in &steps {
        let aggregate = config.placement == AggregationPlacement::EveryStep || t == last;
        let mut builder = BatchBuilder::<F>::new(model.n_items());
        let mut slots = Vec::with_capacity(states.len());
        for s in states.iter_mut() {
            let row_index = builder.rows();
            builder.push(t).copy_from_slice(s.x.as_slice().unwrap());
            let (real, pseudo, real_distances, pseudo_distances) = if aggregate {
                builder.push_neighbors(s.user, t, &model.aggregation, ctx, schedule, &mut s.neighbor_rng)
            } else {
                (row_index + 1..row_index + 1, row_index + 1..row_index + 1, Vec::new(), Vec::new())
            };
            slots.push(QuerySlot { user: s.user, t, row: row_index, real, pseudo, real_distances, pseudo_distances });
        }
        let (inputs, timesteps) = builder.finish();
        let preds = model.denoiser.predict(inputs.view(), &timesteps);
        for (s, slot) in states.iter_mut().zip(&slots) {
            let x0_hat = model.mix_slot(&preds, slot, aggregate).out;
            s.x = if t == 0 { x0_hat } else { posterior_mean(s.x.view(), x0_hat.view(), t, schedule) };
        }
    }
    states.into_iter().map(|s| s.x).collect()
}
