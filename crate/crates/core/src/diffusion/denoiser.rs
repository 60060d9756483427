//! One-hidden-layer tanh MLP predicting x0 from `[x_t ‖ emb(t)]`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::real::Real;
use crate::rng::StageRng;

/// Shape of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserShape {
    pub n_items: usize,
    pub hidden: usize,
    pub time_dim: usize,
}

impl DenoiserShape {
    pub fn input_dim(&self) -> usize {
        self.n_items + self.time_dim
    }
}

/// Sinusoidal embedding `[cos(t·f_j) ‖ sin(t·f_j)]`, `f_j = 10000^(−j/half)`,
/// zero-padded when `dim` is odd.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[j] = arg.cos();
        out[half + j] = arg.sin();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<F: Real> {
    shape: DenoiserShape,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<F> {
    input: Array2<F>,
    hidden: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads<F: Real> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

impl<F: Real> Denoiser<F> {
    /// Xavier-uniform weights, zero biases.
    pub fn init(shape: DenoiserShape, rng: &mut StageRng) -> Self {
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| F::from_f64(rng.random_range(-bound..=bound)))
        };
        let w1 = xavier(shape.input_dim(), shape.hidden);
        let w2 = xavier(shape.hidden, shape.n_items);
        Self { shape, w1, b1: Array1::zeros(shape.hidden), w2, b2: Array1::zeros(shape.n_items) }
    }

    pub fn from_parts(shape: DenoiserShape, w1: Array2<F>, b1: Array1<F>, w2: Array2<F>, b2: Array1<F>) -> Self {
        assert_eq!(w1.dim(), (shape.input_dim(), shape.hidden));
        assert_eq!(b1.len(), shape.hidden);
        assert_eq!(w2.dim(), (shape.hidden, shape.n_items));
        assert_eq!(b2.len(), shape.n_items);
        Self { shape, w1, b1, w2, b2 }
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    fn build_input(&self, x: ArrayView2<F>, timesteps: &[usize]) -> Array2<F> {
        let n = self.shape.n_items;
        assert_eq!(x.ncols(), n, "denoiser input width");
        assert_eq!(x.nrows(), timesteps.len(), "one timestep per row");
        let mut input = Array2::zeros((x.nrows(), self.shape.input_dim()));
        input.slice_mut(s![.., ..n]).assign(&x);
        for (mut row, &t) in input.rows_mut().into_iter().zip(timesteps) {
            for (dst, e) in row.slice_mut(s![n..]).iter_mut().zip(timestep_embedding(t, self.shape.time_dim)) {
                *dst = F::from_f64(e);
            }
        }
        input
    }

    /// Predictions for a batch of rows, with activations for [`backward`](Self::backward).
    pub fn forward(&self, x: ArrayView2<F>, timesteps: &[usize]) -> (Array2<F>, ForwardCache<F>) {
        let input = self.build_input(x, timesteps);
        let mut hidden = input.dot(&self.w1);
        hidden += &self.b1;
        hidden.mapv_inplace(F::tanh);
        let mut out = hidden.dot(&self.w2);
        out += &self.b2;
        (out, ForwardCache { input, hidden })
    }

    pub fn predict(&self, x: ArrayView2<F>, timesteps: &[usize]) -> Array2<F> {
        self.forward(x, timesteps).0
    }

    pub fn backward(&self, cache: &ForwardCache<F>, d_out: ArrayView2<F>) -> DenoiserGrads<F> {
        let w2 = cache.hidden.t().dot(&d_out);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2.t());
        d_hidden.zip_mut_with(&cache.hidden, |d, &h| *d *= F::one() - h * h);
        let w1 = cache.input.t().dot(&d_hidden);
        let b1 = d_hidden.sum_axis(Axis(0));
        DenoiserGrads { w1, b1, w2, b2 }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;

    fn small(n_items: usize) -> Denoiser<f64> {
        let shape = DenoiserShape { n_items, hidden: 7, time_dim: 4 };
        let mut d = Denoiser::init(shape, &mut stage_rng(5, "denoiser", 0));
        let mut rng = stage_rng(5, "bias", 0);
        d.b1.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        d.b2.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        d
    }

    #[test]
    fn embedding_values() {
        let e = timestep_embedding(0, 10);
        assert_eq!(&e[..5], &[1.0; 5]);
        assert_eq!(&e[5..], &[0.0; 5]);
        let e = timestep_embedding(3, 5);
        assert_eq!(e.len(), 5);
        assert_eq!(e[4], 0.0);
        assert!((e[0] - 3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn shape_and_determinism() {
        let d = small(6);
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i * j) as f64 * 0.1);
        let a = d.predict(x.view(), &[0, 1, 7]);
        assert_eq!(a.dim(), (3, 6));
        assert_eq!(a, d.predict(x.view(), &[0, 1, 7]));
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let d = small(6);
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i + 2 * j) % 3) as f64);
        let all = d.predict(x.view(), &[1, 2, 3, 4, 5]);
        let one = d.predict(x.slice(s![2..3, ..]), &[3]);
        assert_eq!(all.row(2), one.row(0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut d = small(5);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 4.0);
        let ts = [1, 3, 0, 9];
        let target = Array2::from_shape_fn((4, 5), |(i, j)| ((i + j) % 2) as f64);
        let loss = |d: &Denoiser<f64>| {
            let p = d.predict(x.view(), &ts);
            (&p - &target).mapv(|v| v * v).sum()
        };
        let (out, cache) = d.forward(x.view(), &ts);
        let g = d.backward(&cache, ((&out - &target) * 2.0).view());
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        macro_rules! check {
            ($field:ident, $grad:expr) => {
                for k in 0..d.$field.len() {
                    let orig = d.$field.as_slice().unwrap()[k];
                    d.$field.as_slice_mut().unwrap()[k] = orig + h;
                    let up = loss(&d);
                    d.$field.as_slice_mut().unwrap()[k] = orig - h;
                    let down = loss(&d);
                    d.$field.as_slice_mut().unwrap()[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = $grad.as_slice().unwrap()[k];
                    worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
                }
            };
        }
        check!(w1, g.w1);
        check!(b1, g.b1);
        check!(w2, g.w2);
        check!(b2, g.b2);
        assert!(worst < 1e-6, "max relative error {worst}");
    }
}
