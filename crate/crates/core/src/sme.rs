//! Stochastic modified equations for SGD variants, Euler–Maruyama integration
//! and Ornstein–Uhlenbeck closed forms.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::objectives::{
    gradient_covariance_into, hessian, CovarianceScratch, FiniteSumObjective, GradientStructure,
};
use crate::rng::replica_rng;
use crate::sgd_sim::{Trajectory, DIVERGENCE_THRESHOLD};

pub use crate::linalg::psd_sqrt;
use crate::linalg::psd_sqrt_into;

/// A time-dependent control `t ↦ [0, 1]`.
pub type Schedule = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn constant_schedule(v: f64) -> Schedule {
    Arc::new(move |_| v)
}

type DriftFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(&[f64], f64, &mut DMatrix<f64>) + Send + Sync;

pub enum Diffusion {
    Zero,
    Constant(DMatrix<f64>),
    /// Constant matrix scaled by a time-dependent factor.
    ScaledConstant(DMatrix<f64>, Schedule),
    State(Box<DiffusionFn>),
}

/// `dX = b(X, t) dt + σ(X, t) dW` with a square `dim × dim` diffusion.
pub struct SdeSystem {
    pub dim: usize,
    pub label: String,
    drift: Box<DriftFn>,
    diffusion: Diffusion,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl SdeSystem {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        drift: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        diffusion: Diffusion,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            drift: Box::new(drift),
            diffusion,
        }
    }

    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    pub fn drift(&self, x: &[f64], t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.drift_into(x, t, out.as_mut_slice());
        out
    }

    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut DMatrix<f64>) {
        match &self.diffusion {
            Diffusion::Zero => out.fill(0.0),
            Diffusion::Constant(m) => out.copy_from(m),
            Diffusion::ScaledConstant(m, s) => {
                let k = s(t);
                out.copy_from(m);
                *out *= k;
            }
            Diffusion::State(f) => f(x, t, out),
        }
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.diffusion_into(x, t, &mut out);
        out
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.diffusion, Diffusion::Zero)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("eta", "learning rate must be positive"))
    }
}

/// `√(η Σ)`, precomputed when `Σ` does not depend on the state.
fn noise_root(obj: &FiniteSumObjective, eta: f64) -> Diffusion {
    let d = obj.dim();
    if obj.n() == 1 {
        return Diffusion::Zero;
    }
    if let GradientStructure::AffineSamples(_) = obj.structure() {
        let mut sigma = DMatrix::zeros(d, d);
        gradient_covariance_into(obj.loss(), &vec![0.0; d], &mut sigma, &mut CovarianceScratch::new(d));
        if sigma.iter().all(|v| *v == 0.0) {
            return Diffusion::Zero;
        }
        sigma *= eta;
        let mut root = DMatrix::zeros(d, d);
        psd_sqrt_into(&sigma, &mut root);
        return Diffusion::Constant(root);
    }
    let obj = obj.clone();
    Diffusion::State(Box::new(move |x, _t, out| {
        let mut sigma = DMatrix::zeros(d, d);
        gradient_covariance_into(obj.loss(), x, &mut sigma, &mut CovarianceScratch::new(d));
        sigma *= eta;
        psd_sqrt_into(&sigma, out);
    }))
}

/// First-order SME: `dX = −∇f(X) dt + √(η Σ(X)) dW`.
pub fn build_sme_order1(obj: &FiniteSumObjective, eta: f64) -> Result<SdeSystem> {
    check_eta(eta)?;
    let diffusion = noise_root(obj, eta);
    let o = obj.clone();
    Ok(SdeSystem::new(
        obj.dim(),
        format!("sme1[{}]", obj.name()),
        move |x, _t, out| {
            o.loss().full_grad(x, out);
            out.iter_mut().for_each(|v| *v = -*v);
        },
        diffusion,
    ))
}

/// Second-order SME: drift `−∇f − (η/2) Hf ∇f`, the gradient of `f + (η/4)|∇f|²`.
pub fn build_sme_order2(obj: &FiniteSumObjective, eta: f64) -> Result<SdeSystem> {
    check_eta(eta)?;
    let d = obj.dim();
    hessian(obj, &vec![0.0; d]).map_err(|_| Error::MissingHessian(obj.name().to_string()))?;
    let diffusion = noise_root(obj, eta);
    let o = obj.clone();
    let label = format!("sme2[{}]", obj.name());
    if let Some(slope) = constant_hessian_diagonal(obj) {
        // affine gradients: the correction is a per-coordinate rescale
        return Ok(SdeSystem::new(
            d,
            label,
            move |x, _t, out| {
                o.loss().full_grad(x, out);
                for (v, a) in out.iter_mut().zip(&slope) {
                    *v *= -(1.0 + 0.5 * eta * a);
                }
            },
            diffusion,
        ));
    }
    Ok(SdeSystem::new(
        d,
        label,
        move |x, _t, out| {
            o.loss().full_grad(x, out);
            let h = o
                .loss()
                .hessian(x)
                .unwrap_or_else(|| crate::objectives::fd_hessian(o.loss(), x));
            let g = DVector::from_column_slice(out);
            let hg = h * &g;
            for j in 0..out.len() {
                out[j] = -g[j] - 0.5 * eta * hg[j];
            }
        },
        diffusion,
    ))
}

fn constant_hessian_diagonal(obj: &FiniteSumObjective) -> Option<Vec<f64>> {
    match obj.structure() {
        GradientStructure::AffineSamples(a) => Some(a.slope),
        GradientStructure::AffineMean { slope, .. } => Some(slope),
        GradientStructure::General => None,
    }
}

/// SME of learning-rate-adjusted SGD: `dX = −u_t ∇f dt + u_t √(η Σ) dW`.
pub fn build_sme_lr(obj: &FiniteSumObjective, eta: f64, u: Schedule) -> Result<SdeSystem> {
    check_eta(eta)?;
    let d = obj.dim();
    let diffusion = match noise_root(obj, eta) {
        Diffusion::Zero => Diffusion::Zero,
        Diffusion::Constant(m) => Diffusion::ScaledConstant(m, Arc::clone(&u)),
        Diffusion::State(f) => {
            let u = Arc::clone(&u);
            Diffusion::State(Box::new(move |x, t, out| {
                f(x, t, out);
                *out *= u(t).clamp(0.0, 1.0);
            }))
        }
        Diffusion::ScaledConstant(..) => unreachable!("noise_root never scales"),
    };
    let o = obj.clone();
    Ok(SdeSystem::new(
        d,
        format!("sme-lr[{}]", obj.name()),
        move |x, t, out| {
            let k = u(t).clamp(0.0, 1.0);
            o.loss().full_grad(x, out);
            out.iter_mut().for_each(|v| *v *= -k);
        },
        diffusion,
    ))
}

/// Momentum SME on the stacked state `(V, X) ∈ R^{2d}`:
/// `dV = (−(1−μ_t)/η V − ∇f(X)) dt + √(η Σ(X)) dW`, `dX = V/η dt`.
pub fn build_sme_momentum(obj: &FiniteSumObjective, eta: f64, mu: Schedule) -> Result<SdeSystem> {
    check_eta(eta)?;
    let d = obj.dim();
    let inner = noise_root(obj, eta);
    let embed = |m: &DMatrix<f64>, out: &mut DMatrix<f64>| {
        out.fill(0.0);
        out.view_mut((0, 0), (d, d)).copy_from(m);
    };
    let diffusion = match inner {
        Diffusion::Zero => Diffusion::Zero,
        Diffusion::Constant(m) => {
            let mut full = DMatrix::zeros(2 * d, 2 * d);
            embed(&m, &mut full);
            Diffusion::Constant(full)
        }
        Diffusion::State(f) => Diffusion::State(Box::new(move |state, t, out| {
            let mut block = DMatrix::zeros(d, d);
            f(&state[d..], t, &mut block);
            out.fill(0.0);
            out.view_mut((0, 0), (d, d)).copy_from(&block);
        })),
        Diffusion::ScaledConstant(..) => unreachable!("noise_root never scales"),
    };
    let o = obj.clone();
    Ok(SdeSystem::new(
        2 * d,
        format!("sme-momentum[{}]", obj.name()),
        move |state, t, out| {
            let damping = (1.0 - mu(t)) / eta;
            let (dv, dx) = out.split_at_mut(d);
            o.loss().full_grad(&state[d..], dv);
            for j in 0..d {
                dv[j] = -damping * state[j] - dv[j];
                dx[j] = state[j] / eta;
            }
        },
        diffusion,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, steps: usize, x0: Vec<f64>, seed: u64) -> Self {
        Self {
            dt,
            steps,
            x0,
            seed,
            record_every: 1,
        }
    }

    /// Step `δ = η/10`, enough steps to reach `horizon`.
    pub fn for_learning_rate(eta: f64, horizon: f64, x0: Vec<f64>, seed: u64) -> Self {
        let dt = eta / 10.0;
        Self::new(dt, crate::ode::grid_steps(horizon, dt), x0, seed)
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }
}

/// Euler–Maruyama `X_{k+1} = X_k + δ b(X_k, t_k) + √δ σ(X_k, t_k) Z_k` on replica stream 0.
pub fn euler_maruyama(system: &SdeSystem, cfg: &IntegratorConfig) -> Result<Trajectory> {
    euler_maruyama_replica(system, cfg, 0)
}

pub fn euler_maruyama_replica(
    system: &SdeSystem,
    cfg: &IntegratorConfig,
    replica: usize,
) -> Result<Trajectory> {
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if cfg.record_every == 0 {
        return Err(Error::invalid("record_every", "must be >= 1"));
    }
    if cfg.x0.len() != system.dim {
        return Err(Error::DimensionMismatch {
            expected: system.dim,
            got: cfg.x0.len(),
        });
    }
    ensure_finite("x0", &cfg.x0)?;
    let n = system.dim;
    let mut rng = replica_rng(cfg.seed, replica as u64);
    let sqrt_dt = cfg.dt.sqrt();
    let mut x = cfg.x0.clone();
    let mut b = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut sigma = DMatrix::zeros(n, n);
    let deterministic = system.is_deterministic();
    let cap = cfg.steps / cfg.record_every + 2;
    let mut traj = Trajectory {
        steps: Vec::with_capacity(cap),
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        velocities: None,
        losses: None,
    };
    traj.steps.push(0);
    traj.times.push(0.0);
    traj.states.push(DVector::from_column_slice(&x));
    for k in 0..cfg.steps {
        let t = k as f64 * cfg.dt;
        system.drift_into(&x, t, &mut b);
        if deterministic {
            for i in 0..n {
                x[i] += cfg.dt * b[i];
            }
        } else {
            system.diffusion_into(&x, t, &mut sigma);
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for i in 0..n {
                let mut noise = 0.0;
                for j in 0..n {
                    noise += sigma[(i, j)] * z[j];
                }
                x[i] += cfg.dt * b[i] + sqrt_dt * noise;
            }
        }
        if x.iter().any(|a| !(a.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Diverged {
                step: k + 1,
                replica: Some(replica),
            });
        }
        let k1 = k + 1;
        if k1 % cfg.record_every == 0 || k1 == cfg.steps {
            traj.steps.push(k1);
            traj.times.push(k1 as f64 * cfg.dt);
            traj.states.push(DVector::from_column_slice(&x));
        }
    }
    Ok(traj)
}

/// Mean and covariance of a Gaussian marginal at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub t: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn scalar(t: f64, mean: f64, variance: f64) -> Self {
        Self {
            t,
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, variance),
        }
    }

    pub fn std(&self, j: usize) -> f64 {
        self.covariance[(j, j)].max(0.0).sqrt()
    }
}

/// Marginal of `dX = θ(ξ − X) dt + σ dW`, `X₀ = x₀`.
pub fn ou_exact_moments(theta: f64, xi: f64, sigma: f64, x0: f64, t: f64) -> Result<GaussianSummary> {
    if !(theta > 0.0) {
        return Err(Error::invalid("theta", "must be positive"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    let decay = (-theta * t).exp();
    let mean = x0 * decay + xi * (1.0 - decay);
    // 1 − e^{−2θt} via expm1 keeps small-t variances accurate
    let var = sigma * sigma / (2.0 * theta) * -(-2.0 * theta * t).exp_m1();
    Ok(GaussianSummary::scalar(t, mean, var))
}

/// Marginal of the second-order SME of `quadratic1d`: `dX = −2(1+η) X dt + 2√η dW`.
pub fn quadratic_sme_distribution(eta: f64, x0: f64, t: f64) -> Result<GaussianSummary> {
    check_eta(eta)?;
    ou_exact_moments(2.0 * (1.0 + eta), 0.0, 2.0 * eta.sqrt(), x0, t)
}
