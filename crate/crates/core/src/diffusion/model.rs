//! The collaborative denoiser: an MLP whose x0 prediction for a user is
//! mixed with the predictions for its cached real and pseudo neighbors, and
//! the weighted reconstruction objective over a batch.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use crate::aggregate::{
    aggregate_prediction, AttentionConfig, AttentionInput, AttentionRegistry, AttentionStrategy, MixtureWeights,
};
use crate::data::InteractionMatrix;
use crate::diffusion::denoiser::{Denoiser, DenoiserGrads, DenoiserShape};
use crate::diffusion::schedule::{forward_sample_into, DiffusionSchedule};
use crate::neighbors::{Neighbor, NeighborCache};
use crate::pseudo::PseudoUserMatrix;
use crate::error::Result;
use crate::real::Real;
use crate::rng::stage_rng;

/// How neighbor predictions enter the user's prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationSettings {
    /// `false` runs the plain denoiser path and never looks at neighbors.
    pub enabled: bool,
    pub mix: MixtureWeights,
    /// Treat neighbor predictions as constants in the backward pass.
    pub detach_neighbors: bool,
}

impl AggregationSettings {
    pub fn disabled() -> Self {
        Self { enabled: false, mix: MixtureWeights::own_only(), detach_neighbors: false }
    }

    pub fn new(mix: MixtureWeights) -> Self {
        Self { enabled: true, mix, detach_neighbors: false }
    }

    pub fn uses_real(&self) -> bool {
        self.enabled && self.mix.uses_real()
    }

    pub fn uses_pseudo(&self) -> bool {
        self.enabled && self.mix.uses_pseudo()
    }
}

#[derive(Debug, Clone)]
pub struct CDiffModel<F: Real> {
    pub denoiser: Denoiser<F>,
    pub attention: Box<dyn AttentionStrategy<F>>,
    pub aggregation: AggregationSettings,
}

/// Gradients laid out like [`CDiffModel::param_slices`].
#[derive(Debug, Clone)]
pub struct ModelGrads<F: Real> {
    pub denoiser: DenoiserGrads<F>,
    pub attention: Vec<Array2<F>>,
}

impl<F: Real> ModelGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        let d = &self.denoiser;
        let mut v = vec![
            d.w1.as_slice().unwrap(),
            d.b1.as_slice().unwrap(),
            d.w2.as_slice().unwrap(),
            d.b2.as_slice().unwrap(),
        ];
        v.extend(self.attention.iter().map(|a| a.as_slice().unwrap()));
        v
    }
}

impl<F: Real> CDiffModel<F> {
    /// Fresh model. The denoiser and the attention strategy draw from
    /// separate streams, so the denoiser init does not depend on the mode.
    pub fn init(
        shape: DenoiserShape,
        attention: &AttentionConfig,
        registry: &AttentionRegistry<F>,
        aggregation: AggregationSettings,
        seed: u64,
    ) -> Result<Self> {
        aggregation.mix.validate()?;
        let denoiser = Denoiser::init(shape, &mut stage_rng(seed, "denoiser", 0));
        let attention = registry.create(attention, shape.n_items, &mut stage_rng(seed, "attention", 0))?;
        Ok(Self { denoiser, attention, aggregation })
    }

    pub fn n_items(&self) -> usize {
        self.denoiser.shape().n_items
    }

    /// Denoiser tensors (`w1, b1, w2, b2`) followed by attention tensors.
    pub fn param_slices(&self) -> Vec<&[F]> {
        let d = &self.denoiser;
        let mut v = vec![
            d.w1.as_slice().unwrap(),
            d.b1.as_slice().unwrap(),
            d.w2.as_slice().unwrap(),
            d.b2.as_slice().unwrap(),
        ];
        v.extend(self.attention.params().into_iter().map(|a| a.as_slice().unwrap()));
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let d = &mut self.denoiser;
        let mut v = vec![
            d.w1.as_slice_mut().unwrap(),
            d.b1.as_slice_mut().unwrap(),
            d.w2.as_slice_mut().unwrap(),
            d.b2.as_slice_mut().unwrap(),
        ];
        v.extend(self.attention.params_mut().into_iter().map(|a| a.as_slice_mut().unwrap()));
        v
    }

    pub fn params_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Read counters on the neighbor data, for checking which pools a
/// configuration touches.
#[derive(Debug, Default)]
pub struct AccessCounters {
    real_rows: AtomicU64,
    pseudo_rows: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessSnapshot {
    /// Real-neighbor rows fed to the denoiser.
    pub real_rows: u64,
    /// Pseudo-user rows read from the pseudo-user matrix.
    pub pseudo_rows: u64,
}

impl AccessCounters {
    pub fn snapshot(&self) -> AccessSnapshot {
        AccessSnapshot {
            real_rows: self.real_rows.load(Ordering::Relaxed),
            pseudo_rows: self.pseudo_rows.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.real_rows.store(0, Ordering::Relaxed);
        self.pseudo_rows.store(0, Ordering::Relaxed);
    }
}

/// Train rows, pseudo-users and the neighbor cache built from them.
pub struct NeighborContext<'a> {
    pub train: &'a InteractionMatrix,
    pub pseudo: &'a PseudoUserMatrix,
    pub cache: &'a NeighborCache,
    pub counters: AccessCounters,
}

impl<'a> NeighborContext<'a> {
    pub fn new(train: &'a InteractionMatrix, pseudo: &'a PseudoUserMatrix, cache: &'a NeighborCache) -> Self {
        assert_eq!(train.n_items(), pseudo.n_items(), "train / pseudo item counts");
        assert_eq!(train.n_users(), cache.n_users, "cache built for a different user count");
        Self { train, pseudo, cache, counters: AccessCounters::default() }
    }

    pub fn real_neighbors(&self, user: usize) -> &[Neighbor] {
        &self.cache.real[user]
    }

    pub fn pseudo_neighbors(&self, user: usize) -> &[Neighbor] {
        &self.cache.pseudo[user]
    }

    pub(crate) fn fill_real_row<F: Real>(&self, user: usize, out: &mut [F]) {
        self.counters.real_rows.fetch_add(1, Ordering::Relaxed);
        self.train.fill_dense_row(user, out);
    }

    pub(crate) fn fill_pseudo_row<F: Real>(&self, p: usize, out: &mut [F]) {
        self.counters.pseudo_rows.fetch_add(1, Ordering::Relaxed);
        for (o, &x) in out.iter_mut().zip(self.pseudo.row(p)) {
            *o = F::from_f64(x as f64);
        }
    }
}

/// Where one query and its neighbors sit in a stacked denoiser batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySlot {
    pub user: usize,
    pub t: usize,
    pub row: usize,
    pub real: Range<usize>,
    pub pseudo: Range<usize>,
    pub real_distances: Vec<f64>,
    pub pseudo_distances: Vec<f64>,
}

/// Noised rows ready for the denoiser plus the clean targets.
#[derive(Debug, Clone)]
pub struct PreparedBatch<F: Real> {
    pub slots: Vec<QuerySlot>,
    pub inputs: Array2<F>,
    pub timesteps: Vec<usize>,
    pub targets: Array2<F>,
}

/// Rows that make up a stacked denoiser input.
pub(crate) struct BatchBuilder<F: Real> {
    n_items: usize,
    data: Vec<F>,
    timesteps: Vec<usize>,
}

impl<F: Real> BatchBuilder<F> {
    pub(crate) fn new(n_items: usize) -> Self {
        Self { n_items, data: Vec::new(), timesteps: Vec::new() }
    }

    pub(crate) fn rows(&self) -> usize {
        self.timesteps.len()
    }

    /// Append a zeroed row at timestep `t` and return it for filling.
    pub(crate) fn push(&mut self, t: usize) -> &mut [F] {
        let start = self.data.len();
        self.data.resize(start + self.n_items, F::zero());
        self.timesteps.push(t);
        &mut self.data[start..]
    }

    /// Real and pseudo neighbor rows of `user`, each noised to `t` with
    /// `rng`. Pools the settings switch off are not read.
    pub(crate) fn push_neighbors<R: Rng + ?Sized>(
        &mut self,
        user: usize,
        t: usize,
        settings: &AggregationSettings,
        ctx: &NeighborContext,
        schedule: &DiffusionSchedule,
        rng: &mut R,
    ) -> (Range<usize>, Range<usize>, Vec<f64>, Vec<f64>) {
        let start = self.rows();
        let mut real_d = Vec::new();
        if settings.uses_real() {
            for n in ctx.real_neighbors(user) {
                let row = self.push(t);
                ctx.fill_real_row(n.id as usize, row);
                forward_sample_into(row, t, schedule, rng);
                real_d.push(n.distance);
            }
        }
        let mid = self.rows();
        let mut pseudo_d = Vec::new();
        if settings.uses_pseudo() {
            for n in ctx.pseudo_neighbors(user) {
                let row = self.push(t);
                ctx.fill_pseudo_row(n.id as usize, row);
                forward_sample_into(row, t, schedule, rng);
                pseudo_d.push(n.distance);
            }
        }
        (start..mid, mid..self.rows(), real_d, pseudo_d)
    }

    pub(crate) fn finish(self) -> (Array2<F>, Vec<usize>) {
        let n = self.timesteps.len();
        (Array2::from_shape_vec((n, self.n_items), self.data).unwrap(), self.timesteps)
    }
}

/// Sample `t ~ U{1..T}` per user, noise its train row with `query_rng` and
/// its neighbors' rows at the same `t` with `neighbor_rng`.
///
/// The query draws never depend on whether neighbors are used, so a run
/// without aggregation sees the same timesteps and noise.
pub fn prepare_batch<F: Real, R: Rng + ?Sized>(
    users: &[usize],
    settings: &AggregationSettings,
    ctx: &NeighborContext,
    schedule: &DiffusionSchedule,
    query_rng: &mut R,
    neighbor_rng: &mut R,
) -> PreparedBatch<F> {
    let n_items = ctx.train.n_items();
    let mut builder = BatchBuilder::<F>::new(n_items);
    let mut targets = Array2::zeros((users.len(), n_items));
    let mut slots = Vec::with_capacity(users.len());
    for (b, &user) in users.iter().enumerate() {
        let t = query_rng.random_range(1..=schedule.steps());
        let row_index = builder.rows();
        let row = builder.push(t);
        ctx.train.fill_dense_row(user, row);
        targets.row_mut(b).assign(&ArrayView1::from(&*row));
        forward_sample_into(row, t, schedule, query_rng);
        let (real, pseudo, real_distances, pseudo_distances) =
            builder.push_neighbors(user, t, settings, ctx, schedule, neighbor_rng);
        slots.push(QuerySlot { user, t, row: row_index, real, pseudo, real_distances, pseudo_distances });
    }
    let (inputs, timesteps) = builder.finish();
    PreparedBatch { slots, inputs, timesteps, targets }
}

/// Forward pieces of one query's mixed prediction.
pub(crate) struct SlotForward<F> {
    pub out: Array1<F>,
    pub real_scores: Option<Array1<F>>,
    pub pseudo_scores: Option<Array1<F>>,
}

impl<F: Real> CDiffModel<F> {
    /// Mixed prediction for one slot given the denoiser outputs of the
    /// whole stacked batch.
    pub(crate) fn mix_slot(&self, preds: &Array2<F>, slot: &QuerySlot, aggregate: bool) -> SlotForward<F> {
        let own = preds.row(slot.row);
        if !self.aggregation.enabled || !aggregate {
            return SlotForward { out: own.to_owned(), real_scores: None, pseudo_scores: None };
        }
        let real_preds = preds.slice(s![slot.real.clone(), ..]);
        let pseudo_preds = preds.slice(s![slot.pseudo.clone(), ..]);
        let score = |nb: ndarray::ArrayView2<F>, d: &[f64]| {
            (!d.is_empty()).then(|| self.attention.scores(&AttentionInput { query_pred: own, neighbor_preds: nb, distances: d }))
        };
        let real_scores = score(real_preds, &slot.real_distances);
        let pseudo_scores = score(pseudo_preds, &slot.pseudo_distances);
        let out = aggregate_prediction(
            own,
            real_preds,
            pseudo_preds,
            real_scores.as_ref().map(|a| a.as_slice().unwrap()).unwrap_or(&[]),
            pseudo_scores.as_ref().map(|a| a.as_slice().unwrap()).unwrap_or(&[]),
            &self.aggregation.mix,
        );
        SlotForward { out, real_scores, pseudo_scores }
    }

    /// Mean over the batch of `C(t)·‖r̂′_u − r_u‖²`, and its gradient when
    /// `with_grads` is set.
    pub fn batch_objective(
        &self,
        batch: &PreparedBatch<F>,
        schedule: &DiffusionSchedule,
        with_grads: bool,
    ) -> (F, Option<ModelGrads<F>>) {
        let (preds, cache) = self.denoiser.forward(batch.inputs.view(), &batch.timesteps);
        let inv_b = F::one() / F::from_f64(batch.slots.len() as f64);
        let mut loss = F::zero();
        let mut d_preds = if with_grads { Some(Array2::zeros(preds.dim())) } else { None };
        let mut attention_grads: Vec<Array2<F>> =
            self.attention.params().iter().map(|p| Array2::zeros(p.dim())).collect();
        for (b, slot) in batch.slots.iter().enumerate() {
            let fwd = self.mix_slot(&preds, slot, true);
            let resid = &fwd.out - &batch.targets.row(b);
            let weight = F::from_f64(schedule.loss_weight(slot.t));
            loss += weight * resid.dot(&resid) * inv_b;
            if let Some(dp) = d_preds.as_mut() {
                let g = resid.mapv(|r| F::from_f64(2.0) * weight * inv_b * r);
                self.backward_slot(&preds, slot, &fwd, &g, dp, &mut attention_grads);
            }
        }
        let grads = d_preds.map(|dp| ModelGrads { denoiser: self.denoiser.backward(&cache, dp.view()), attention: attention_grads });
        (loss, grads)
    }

    fn backward_slot(
        &self,
        preds: &Array2<F>,
        slot: &QuerySlot,
        fwd: &SlotForward<F>,
        g: &Array1<F>,
        d_preds: &mut Array2<F>,
        attention_grads: &mut [Array2<F>],
    ) {
        if !self.aggregation.enabled {
            d_preds.row_mut(slot.row).zip_mut_with(g, |d, &x| *d += x);
            return;
        }
        let mix = &self.aggregation.mix;
        let alpha = F::from_f64(mix.alpha);
        d_preds.row_mut(slot.row).zip_mut_with(g, |d, &x| *d += alpha * x);
        let own = preds.row(slot.row);
        let pools = [
            (mix.beta, &slot.real, &slot.real_distances, &fwd.real_scores),
            (mix.gamma, &slot.pseudo, &slot.pseudo_distances, &fwd.pseudo_scores),
        ];
        for (weight, range, distances, scores) in pools {
            let Some(scores) = scores else { continue };
            if weight == 0.0 {
                continue;
            }
            let w = F::from_f64(weight);
            let nb = preds.slice(s![range.clone(), ..]);
            // pool term = w · Σ_k a_k · p_k
            let g_pool = g.mapv(|x| w * x);
            let d_scores = nb.dot(&g_pool);
            if !self.aggregation.detach_neighbors {
                for (k, &a) in scores.iter().enumerate() {
                    d_preds.row_mut(range.start + k).scaled_add(a, &g_pool);
                }
            }
            let input = AttentionInput { query_pred: own, neighbor_preds: nb, distances };
            let back = self.attention.backward(&input, scores, &d_scores, attention_grads);
            if let Some(dq) = back.d_query {
                d_preds.row_mut(slot.row).zip_mut_with(&dq, |d, &x| *d += x);
            }
            if let (Some(dn), false) = (back.d_neighbors, self.aggregation.detach_neighbors) {
                let mut block = d_preds.slice_mut(s![range.clone(), ..]);
                block += &dn;
            }
        }
    }
}
