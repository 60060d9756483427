//! Attention strategies over a neighbor pool, registered by name.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::StageRng;

/// Which strategy to build, by registry name, and its embedding width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub mode: String,
    #[serde(default = "AttentionConfig::default_dim")]
    pub dim: usize,
}

impl AttentionConfig {
    pub const AVERAGE_POOLING: &'static str = "average_pooling";
    pub const BEHAVIOR_SIMILARITY: &'static str = "behavior_similarity";
    pub const PARAMETRIC: &'static str = "parametric";

    fn default_dim() -> usize {
        64
    }

    pub fn new(mode: &str) -> Self {
        Self { mode: mode.to_owned(), dim: Self::default_dim() }
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self::new(Self::BEHAVIOR_SIMILARITY)
    }
}

/// One neighbor pool as seen by a strategy.
pub struct AttentionInput<'a, F> {
    /// The query user's own prediction.
    pub query_pred: ArrayView1<'a, F>,
    /// One prediction per neighbor, `K × |I|`.
    pub neighbor_preds: ArrayView2<'a, F>,
    /// Cached cosine distances between the query's raw row and each
    /// neighbor's raw row.
    pub distances: &'a [f64],
}

impl<F> AttentionInput<'_, F> {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Gradients of a scalar loss with respect to the strategy's inputs.
/// `None` means the scores do not depend on that input.
pub struct AttentionBackward<F> {
    pub d_query: Option<Array1<F>>,
    pub d_neighbors: Option<Array2<F>>,
}

impl<F> AttentionBackward<F> {
    pub fn none() -> Self {
        Self { d_query: None, d_neighbors: None }
    }
}

pub trait AttentionStrategy<F: Real>: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Non-negative scores summing to one, one per neighbor.
    fn scores(&self, input: &AttentionInput<F>) -> Array1<F>;

    /// Backpropagate `grad_scores` (dL/dscores). Parameter gradients are
    /// accumulated into `param_grads`, laid out like [`params`](Self::params).
    fn backward(
        &self,
        input: &AttentionInput<F>,
        scores: &Array1<F>,
        grad_scores: &Array1<F>,
        param_grads: &mut [Array2<F>],
    ) -> AttentionBackward<F>;

    fn params(&self) -> Vec<&Array2<F>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn AttentionStrategy<F>>;
}

impl<F: Real> Clone for Box<dyn AttentionStrategy<F>> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: F = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Backward of softmax: `s ⊙ (g − ⟨s, g⟩)`.
fn softmax_backward<F: Real>(scores: &Array1<F>, grad: &Array1<F>) -> Array1<F> {
    let dot = scores.dot(grad);
    scores * &grad.mapv(|g| g - dot)
}

/// Uniform `1/K`.
#[derive(Debug, Clone, Default)]
pub struct AveragePooling;

impl<F: Real> AttentionStrategy<F> for AveragePooling {
    fn name(&self) -> &'static str {
        AttentionConfig::AVERAGE_POOLING
    }

    fn scores(&self, input: &AttentionInput<F>) -> Array1<F> {
        let k = input.len();
        assert!(k >= 1, "attention over an empty neighbor set");
        Array1::from_elem(k, F::one() / F::from_f64(k as f64))
    }

    fn backward(&self, _: &AttentionInput<F>, _: &Array1<F>, _: &Array1<F>, _: &mut [Array2<F>]) -> AttentionBackward<F> {
        AttentionBackward::none()
    }

    fn clone_box(&self) -> Box<dyn AttentionStrategy<F>> {
        Box::new(self.clone())
    }
}

/// Softmax of negated cached distances.
#[derive(Debug, Clone, Default)]
pub struct BehaviorSimilarity;

impl<F: Real> AttentionStrategy<F> for BehaviorSimilarity {
    fn name(&self) -> &'static str {
        AttentionConfig::BEHAVIOR_SIMILARITY
    }

    fn scores(&self, input: &AttentionInput<F>) -> Array1<F> {
        assert!(!input.is_empty(), "attention over an empty neighbor set");
        let neg: Vec<f64> = input.distances.iter().map(|d| -d).collect();
        softmax(&neg).into_iter().map(F::from_f64).collect()
    }

    fn backward(&self, _: &AttentionInput<F>, _: &Array1<F>, _: &Array1<F>, _: &mut [Array2<F>]) -> AttentionBackward<F> {
        AttentionBackward::none()
    }

    fn clone_box(&self) -> Box<dyn AttentionStrategy<F>> {
        Box::new(self.clone())
    }
}

/// Softmax over `(W_qᵀ q)ᵀ (W_kᵀ n_k)` with learned `|I| × d` projections.
#[derive(Debug, Clone)]
pub struct Parametric<F> {
    pub w_query: Array2<F>,
    pub w_key: Array2<F>,
}

impl<F: Real> Parametric<F> {
    /// Uniform init in `±1/√|I|`.
    pub fn init(n_items: usize, dim: usize, rng: &mut StageRng) -> Self {
        let bound = 1.0 / (n_items.max(1) as f64).sqrt();
        let mut draw = |_: (usize, usize)| F::from_f64(rng.random_range(-bound..=bound));
        let w_query = Array2::from_shape_fn((n_items, dim), &mut draw);
        let w_key = Array2::from_shape_fn((n_items, dim), &mut draw);
        Self { w_query, w_key }
    }

    pub fn zeros(n_items: usize, dim: usize) -> Self {
        Self { w_query: Array2::zeros((n_items, dim)), w_key: Array2::zeros((n_items, dim)) }
    }

    fn projections(&self, input: &AttentionInput<F>) -> (Array1<F>, Array2<F>) {
        let q = self.w_query.t().dot(&input.query_pred);
        let k = input.neighbor_preds.dot(&self.w_key);
        (q, k)
    }
}

impl<F: Real> AttentionStrategy<F> for Parametric<F> {
    fn name(&self) -> &'static str {
        AttentionConfig::PARAMETRIC
    }

    fn scores(&self, input: &AttentionInput<F>) -> Array1<F> {
        assert!(!input.is_empty(), "attention over an empty neighbor set");
        let (q, k) = self.projections(input);
        let logits = k.dot(&q);
        Array1::from(softmax(logits.as_slice().unwrap()))
    }

    fn backward(
        &self,
        input: &AttentionInput<F>,
        scores: &Array1<F>,
        grad_scores: &Array1<F>,
        param_grads: &mut [Array2<F>],
    ) -> AttentionBackward<F> {
        let (q, k) = self.projections(input);
        let d_logits = softmax_backward(scores, grad_scores);
        // logits_j = k_j · q
        let d_q = k.t().dot(&d_logits);
        let d_k = {
            let col = d_logits.view().insert_axis(Axis(1));
            let row = q.view().insert_axis(Axis(0));
            col.dot(&row)
        };
        let query_col = input.query_pred.insert_axis(Axis(1));
        param_grads[0] += &query_col.dot(&d_q.view().insert_axis(Axis(0)));
        param_grads[1] += &input.neighbor_preds.t().dot(&d_k);
        AttentionBackward {
            d_query: Some(self.w_query.dot(&d_q)),
            d_neighbors: Some(d_k.dot(&self.w_key.t())),
        }
    }

    fn params(&self) -> Vec<&Array2<F>> {
        vec![&self.w_query, &self.w_key]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![&mut self.w_query, &mut self.w_key]
    }

    fn clone_box(&self) -> Box<dyn AttentionStrategy<F>> {
        Box::new(self.clone())
    }
}

pub type AttentionFactory<F> = fn(&AttentionConfig, usize, &mut StageRng) -> Result<Box<dyn AttentionStrategy<F>>>;

/// Attention strategies by name.
pub struct AttentionRegistry<F: Real> {
    factories: BTreeMap<String, AttentionFactory<F>>,
}

impl<F: Real> Default for AttentionRegistry<F> {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl<F: Real> AttentionRegistry<F> {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(AttentionConfig::AVERAGE_POOLING, |_, _, _| Ok(Box::new(AveragePooling)));
        r.register(AttentionConfig::BEHAVIOR_SIMILARITY, |_, _, _| Ok(Box::new(BehaviorSimilarity)));
        r.register(AttentionConfig::PARAMETRIC, |cfg, n_items, rng| {
            if cfg.dim == 0 {
                return Err(Error::Config("parametric attention needs dim >= 1".into()));
            }
            Ok(Box::new(Parametric::<F>::init(n_items, cfg.dim, rng)))
        });
        r
    }

    pub fn register(&mut self, name: &str, factory: AttentionFactory<F>) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, config: &AttentionConfig, n_items: usize, rng: &mut StageRng) -> Result<Box<dyn AttentionStrategy<F>>> {
        let factory = self
            .factories
            .get(&config.mode)
            .ok_or_else(|| Error::UnknownAttention(config.mode.clone()))?;
        factory(config, n_items, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn input<'a>(q: &'a Array1<f64>, n: &'a Array2<f64>, d: &'a [f64]) -> AttentionInput<'a, f64> {
        AttentionInput { query_pred: q.view(), neighbor_preds: n.view(), distances: d }
    }

    #[test]
    fn average_pooling_is_uniform() {
        let q = array![1.0, 2.0];
        let n = Array2::zeros((4, 2));
        let s = AveragePooling.scores(&input(&q, &n, &[0.0; 4]));
        assert_eq!(s, array![0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn behavior_similarity_hand_softmax() {
        let q = array![1.0];
        let n = Array2::zeros((2, 1));
        let d = [0.0, std::f64::consts::LN_2];
        let s: Array1<f64> = BehaviorSimilarity.scores(&input(&q, &n, &d));
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_projections_give_uniform() {
        let p = Parametric::<f64>::zeros(3, 2);
        let q = array![1.0, 0.5, 0.2];
        let n = array![[0.3, 0.1, 0.9], [1.0, 1.0, 1.0], [0.0, 0.2, 0.0]];
        let s = p.scores(&input(&q, &n, &[0.0; 3]));
        assert!(s.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    #[should_panic(expected = "empty neighbor set")]
    fn empty_pool_is_rejected() {
        let q = array![1.0];
        let n = Array2::<f64>::zeros((0, 1));
        let _ = <AveragePooling as AttentionStrategy<f64>>::scores(&AveragePooling, &input(&q, &n, &[]));
    }

    #[test]
    fn registry_builds_by_name() {
        let reg = AttentionRegistry::<f32>::with_builtins();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["average_pooling", "behavior_similarity", "parametric"]);
        let mut rng = stage_rng(1, "attention", 0);
        let p = reg.create(&AttentionConfig::new("parametric"), 5, &mut rng).unwrap();
        assert_eq!(p.name(), "parametric");
        assert_eq!(p.params().len(), 2);
        assert!(matches!(reg.create(&AttentionConfig::new("nope"), 5, &mut rng), Err(Error::UnknownAttention(_))));
    }

    #[test]
    fn parametric_init_bounds() {
        let mut rng = stage_rng(3, "attention", 0);
        let p = Parametric::<f64>::init(16, 4, &mut rng);
        assert!(p.w_query.iter().chain(p.w_key.iter()).all(|x| x.abs() <= 0.25));
    }

    proptest! {
        #[test]
        fn scores_normalized_and_shift_invariant(
            d in proptest::collection::vec(0.0f64..2.0, 1..12),
            shift in -3.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let k = d.len();
            let q = Array1::from_elem(5, 0.5);
            let mut rng = stage_rng(seed, "t", 0);
            let n = Array2::from_shape_fn((k, 5), |_| rng.random::<f64>());
            let par = Parametric::<f64>::init(5, 3, &mut rng);
            let strategies: [&dyn AttentionStrategy<f64>; 3] = [&AveragePooling, &BehaviorSimilarity, &par];
            for s in strategies {
                let w = s.scores(&input(&q, &n, &d));
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.sum() - 1.0).abs() < 1e-9);
            }
            let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let a = BehaviorSimilarity.scores(&input(&q, &n, &d));
            let b: Array1<f64> = BehaviorSimilarity.scores(&input(&q, &n, &shifted));
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let moved: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            for (x, y) in softmax(&logits).iter().zip(softmax(&moved)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
