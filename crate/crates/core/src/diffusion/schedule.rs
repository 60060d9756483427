//! Linear noise schedule, closed-form forward corruption and the posterior
//! mean used by the deterministic reverse chain.

use ndarray::{Array1, ArrayView1, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Knobs of the linear β schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_scale: f64,
    /// Loss weight used at t = 1, where the closed form is singular.
    #[serde(default = "ScheduleParams::default_first_step_weight")]
    pub first_step_weight: f64,
}

impl ScheduleParams {
    fn default_first_step_weight() -> f64 {
        0.5
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { steps: 40, beta_min: 1e-4, beta_max: 0.02, noise_scale: 0.1, first_step_weight: 0.5 }
    }
}

/// Per-timestep quantities, indexed by `t ∈ 0..=T` (index 0 is the clean
/// data: `ᾱ_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    params: ScheduleParams,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
    loss_weight: Vec<f64>,
}

/// `½(ᾱ_{t−1}/(1−ᾱ_{t−1}) − ᾱ_t/(1−ᾱ_t))`, for `ᾱ_{t−1} < 1`.
pub fn loss_weight_from(alpha_bar_prev: f64, alpha_bar: f64) -> f64 {
    0.5 * (alpha_bar_prev / (1.0 - alpha_bar_prev) - alpha_bar / (1.0 - alpha_bar))
}

/// `(1−α_t)(1−ᾱ_{t−1})/(1−ᾱ_t)` with `ᾱ_t = α_t·ᾱ_{t−1}`.
pub fn posterior_variance_from(alpha: f64, alpha_bar_prev: f64) -> f64 {
    let alpha_bar = alpha * alpha_bar_prev;
    (1.0 - alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
}

/// Coefficients `(c_xt, c_x0)` of the posterior mean.
pub fn posterior_mean_coefficients(alpha: f64, alpha_bar_prev: f64) -> (f64, f64) {
    let alpha_bar = alpha * alpha_bar_prev;
    let c_xt = alpha.sqrt() * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar);
    let c_x0 = alpha_bar_prev.sqrt() * (1.0 - alpha) / (1.0 - alpha_bar);
    (c_xt, c_x0)
}

/// `β_t = noise_scale · linspace(beta_min, beta_max, T)`.
pub fn make_schedule(params: ScheduleParams) -> Result<DiffusionSchedule> {
    let ScheduleParams { steps, beta_min, beta_max, noise_scale, first_step_weight } = params;
    if steps == 0 {
        return Err(Error::Config("diffusion steps must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!("need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
    }
    if !(noise_scale > 0.0 && noise_scale * beta_max < 1.0) {
        return Err(Error::Config(format!("noise_scale {noise_scale} out of range")));
    }
    if !(first_step_weight.is_finite() && first_step_weight > 0.0) {
        return Err(Error::Config("first_step_weight must be positive".into()));
    }
    let (lo, hi) = (noise_scale * beta_min, noise_scale * beta_max);
    let mut alpha = vec![1.0];
    for k in 0..steps {
        let beta = if steps == 1 { lo } else { lo + (hi - lo) * k as f64 / (steps - 1) as f64 };
        alpha.push(1.0 - beta);
    }
    let mut alpha_bar = vec![1.0];
    for t in 1..=steps {
        alpha_bar.push(alpha_bar[t - 1] * alpha[t]);
    }
    let mut posterior_var = vec![0.0];
    let mut loss_weight = vec![0.0];
    for t in 1..=steps {
        posterior_var.push(posterior_variance_from(alpha[t], alpha_bar[t - 1]));
        loss_weight.push(if t == 1 { first_step_weight } else { loss_weight_from(alpha_bar[t - 1], alpha_bar[t]) });
    }
    Ok(DiffusionSchedule { params, alpha, alpha_bar, posterior_var, loss_weight })
}

impl DiffusionSchedule {
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    /// Weight of the reconstruction loss at timestep `t ≥ 1`.
    pub fn loss_weight(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "loss weight needs 1 <= t <= T");
        self.loss_weight[t]
    }
}

/// Draw `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`; `t = 0` returns `x0` unchanged.
pub fn forward_sample<F: Real, R: Rng + ?Sized>(
    x0: ArrayView1<F>,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Array1<F> {
    let mut out = x0.to_owned();
    forward_sample_into(out.view_mut().into_slice().unwrap(), t, schedule, rng);
    out
}

/// In-place variant of [`forward_sample`].
pub fn forward_sample_into<F: Real, R: Rng + ?Sized>(x: &mut [F], t: usize, schedule: &DiffusionSchedule, rng: &mut R) {
    assert!(t <= schedule.steps(), "timestep {t} beyond T = {}", schedule.steps());
    if t == 0 {
        return;
    }
    let ab = schedule.alpha_bar(t);
    let (mean_coef, std) = (F::from_f64(ab.sqrt()), F::from_f64((1.0 - ab).sqrt()));
    for v in x.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v = mean_coef * *v + std * F::from_f64(eps);
    }
}

/// Mean of the reverse transition given the current state and an x0 estimate.
pub fn posterior_mean<F: Real>(x_t: ArrayView1<F>, x0_hat: ArrayView1<F>, t: usize, schedule: &DiffusionSchedule) -> Array1<F> {
    assert!(t >= 1 && t <= schedule.steps(), "posterior mean needs 1 <= t <= T");
    assert_eq!(x_t.len(), x0_hat.len(), "posterior mean length mismatch");
    let (c_xt, c_x0) = posterior_mean_coefficients(schedule.alpha(t), schedule.alpha_bar(t - 1));
    let (c_xt, c_x0) = (F::from_f64(c_xt), F::from_f64(c_x0));
    let mut out = Array1::zeros(x_t.len());
    Zip::from(&mut out).and(&x_t).and(&x0_hat).for_each(|o, &a, &b| *o = c_xt * a + c_x0 * b);
    out
}

/// `C(t)·‖x_pred − x0‖²`.
pub fn reconstruction_loss<F: Real>(x_pred: ArrayView1<F>, x0: ArrayView1<F>, t: usize, schedule: &DiffusionSchedule) -> F {
    assert_eq!(x_pred.len(), x0.len(), "reconstruction loss length mismatch");
    let sq: F = x_pred.iter().zip(x0.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    F::from_f64(schedule.loss_weight(t)) * sq
}
