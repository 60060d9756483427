//! Mixing a user's own denoised prediction with the predictions of its real
//! and pseudo neighbors.

mod attention;

pub use attention::{
    softmax, AttentionBackward, AttentionConfig, AttentionFactory, AttentionInput, AttentionRegistry,
    AttentionStrategy, AveragePooling, BehaviorSimilarity, Parametric,
};

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Weights of own, real-neighbor and pseudo-neighbor predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MixtureWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.3, gamma: 0.2 }
    }
}

impl MixtureWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let m = Self { alpha, beta, gamma };
        m.validate()?;
        Ok(m)
    }

    /// Own prediction only.
    pub fn own_only() -> Self {
        Self { alpha: 1.0, beta: 0.0, gamma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("mixture weights must be non-negative: {self:?}")));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Config(format!("mixture weights must sum to 1: {self:?}")));
        }
        Ok(())
    }

    pub fn uses_real(&self) -> bool {
        self.beta != 0.0
    }

    pub fn uses_pseudo(&self) -> bool {
        self.gamma != 0.0
    }
}

/// `α·own + β·Σ a_k·real_k + γ·Σ a_j·pseudo_j`.
///
/// A pool whose weight is zero is not read, so its prediction matrix may be
/// empty.
pub fn aggregate_prediction<F: Real>(
    own: ArrayView1<F>,
    real_preds: ArrayView2<F>,
    pseudo_preds: ArrayView2<F>,
    real_scores: &[F],
    pseudo_scores: &[F],
    mix: &MixtureWeights,
) -> Array1<F> {
    let n = own.len();
    let mut out = own.mapv(|x| F::from_f64(mix.alpha) * x);
    for (weight, preds, scores) in [(mix.beta, real_preds, real_scores), (mix.gamma, pseudo_preds, pseudo_scores)] {
        if weight == 0.0 {
            continue;
        }
        assert_eq!(preds.nrows(), scores.len(), "one score per neighbor prediction");
        assert!(preds.nrows() == 0 || preds.ncols() == n, "neighbor prediction length mismatch");
        let w = F::from_f64(weight);
        for (row, &a) in preds.rows().into_iter().zip(scores) {
            out.scaled_add(w * a, &row);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn weights_validation() {
        assert!(MixtureWeights::new(0.5, 0.3, 0.2).is_ok());
        assert!(MixtureWeights::new(0.5, 0.3, 0.3).is_err());
        assert!(MixtureWeights::new(1.2, -0.2, 0.0).is_err());
    }

    #[test]
    fn own_only_is_identity() {
        let own = array![0.3f64, -1.0, 7.5];
        let junk = Array2::from_elem((2, 3), 9.0);
        let out = aggregate_prediction(own.view(), junk.view(), junk.view(), &[0.5, 0.5], &[0.5, 0.5], &MixtureWeights::own_only());
        assert_eq!(out, own);
    }

    #[test]
    fn single_real_neighbor() {
        let own = array![1.0f64, 0.0];
        let real = array![[0.25, 0.75]];
        let empty = Array2::<f64>::zeros((0, 2));
        let mix = MixtureWeights::new(0.0, 1.0, 0.0).unwrap();
        let out = aggregate_prediction(own.view(), real.view(), empty.view(), &[1.0], &[], &mix);
        assert_eq!(out, array![0.25, 0.75]);
    }

    #[test]
    fn hand_linear_combination() {
        let own = array![1.0f64, 0.0];
        let real = array![[0.0, 1.0]];
        let pseudo = array![[1.0, 1.0]];
        let out = aggregate_prediction(own.view(), real.view(), pseudo.view(), &[1.0], &[1.0], &MixtureWeights::default());
        assert!((out[0] - 0.7).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn convex_combination_stays_in_unit_box(
            own in proptest::collection::vec(0.0f64..=1.0, 4),
            real in proptest::collection::vec(0.0f64..=1.0, 12),
            pseudo in proptest::collection::vec(0.0f64..=1.0, 8),
            rs in proptest::collection::vec(0.0f64..1.0, 3),
            ps in proptest::collection::vec(0.0f64..1.0, 2),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let alpha = a;
            let beta = (1.0 - a) * b;
            let mix = MixtureWeights { alpha, beta, gamma: 1.0 - alpha - beta };
            let own = Array1::from(own);
            let real = Array2::from_shape_vec((3, 4), real).unwrap();
            let pseudo = Array2::from_shape_vec((2, 4), pseudo).unwrap();
            let rs = softmax(&rs);
            let ps = softmax(&ps);
            let out = aggregate_prediction(own.view(), real.view(), pseudo.view(), &rs, &ps, &mix);
            prop_assert!(out.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        }
    }
}
