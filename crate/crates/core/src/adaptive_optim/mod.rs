//! Controlled optimizers (cSGD, cMSGD) driven by on-the-fly quadratic
//! regression, and the baselines they are compared against.

mod baselines;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub use baselines::{msgd_annealed_mu, Adagrad, Adam, Msgd, MsgdAnnealed, Sgd};
pub use train::{train, TrainConfig, TrainLog, TrainRecord};

const TINY: f64 = 1e-30;

/// Diagnostics averaged over dimensions, when the optimizer has them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mean_u: Option<f64>,
    pub mean_mu: Option<f64>,
    pub mean_beta: Option<f64>,
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    /// Update `x` in place from the (mini-batch) gradient `g`.
    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()>;
    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

fn check_dims(expected: usize, x: &[f64], g: &[f64]) -> Result<()> {
    for got in [x.len(), g.len()] {
        if got != expected {
            return Err(Error::DimensionMismatch { expected, got });
        }
    }
    ensure_finite("gradient", g)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Per-dimension exponential moving averages of `g`, `g²`, `x`, `x²`, `xg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub g_bar: Vec<f64>,
    pub g2_bar: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub x2_bar: Vec<f64>,
    pub xg_bar: Vec<f64>,
    pub beta: Vec<f64>,
    /// Number of observations absorbed.
    pub k: usize,
}

impl EmaState {
    pub fn new(dim: usize, beta0: f64) -> Self {
        Self {
            g_bar: vec![0.0; dim],
            g2_bar: vec![0.0; dim],
            x_bar: vec![0.0; dim],
            x2_bar: vec![0.0; dim],
            xg_bar: vec![0.0; dim],
            beta: vec![beta0; dim],
            k: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// `ā ← β ā + (1−β) a` with each dimension's current `β`; the first
/// observation seeds the averages.
pub fn ema_update(state: &mut EmaState, x: &[f64], g: &[f64]) -> Result<()> {
    check_dims(state.dim(), x, g)?;
    ensure_finite("x", x)?;
    let first = state.k == 0;
    for j in 0..state.dim() {
        let b = if first { 0.0 } else { state.beta[j] };
        let mix = |avg: &mut f64, v: f64| *avg = b * *avg + (1.0 - b) * v;
        mix(&mut state.g_bar[j], g[j]);
        mix(&mut state.g2_bar[j], g[j] * g[j]);
        mix(&mut state.x_bar[j], x[j]);
        mix(&mut state.x2_bar[j], x[j] * x[j]);
        mix(&mut state.xg_bar[j], x[j] * g[j]);
    }
    state.k += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaRule {
    /// `clip(raw, β_min, β_max)`
    #[default]
    Clip,
    /// `β_min + (β_max − β_min) · raw`
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for BetaBounds {
    fn default() -> Self {
        Self { min: 0.9, max: 0.999 }
    }
}

/// Averaging decay from the noise fraction `(ḡ²̄ − ḡ²)/ḡ²̄`.
pub fn beta_heuristic(state: &EmaState, rule: BetaRule, bounds: BetaBounds) -> Vec<f64> {
    (0..state.dim())
        .map(|j| {
            let g2 = state.g2_bar[j];
            if !(g2 >= TINY) {
                return bounds.min;
            }
            let raw = ((g2 - state.g_bar[j].powi(2)) / g2).clamp(0.0, 1.0);
            match rule {
                BetaRule::Clip => raw.clamp(bounds.min, bounds.max),
                BetaRule::Affine => bounds.min + (bounds.max - bounds.min) * raw,
            }
        })
        .collect()
}

/// Per-dimension local model `½a(x−b)²` with gradient-noise variance `Σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEstimate {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Least-squares fit of `g ≈ a(x − b)` from the moving averages.
///
/// A vanishing spread in `x` gives `a = 0` (and `b = x̄`), which routes the
/// policies through their no-curvature branch.
pub fn regress_quadratic(state: &EmaState) -> RegressionEstimate {
    let d = state.dim();
    let mut est = RegressionEstimate {
        a: vec![0.0; d],
        b: vec![0.0; d],
        sigma: vec![0.0; d],
    };
    for j in 0..d {
        let (g, x) = (state.g_bar[j], state.x_bar[j]);
        est.sigma[j] = (state.g2_bar[j] - g * g).max(0.0);
        let var_x = state.x2_bar[j] - x * x;
        // relative cut-off: EMA round-off leaves ~1e-16·x̄² of spurious spread
        if var_x < TINY.max(1e-12 * state.x2_bar[j]) {
            est.b[j] = x;
            continue;
        }
        let a = (state.xg_bar[j] - g * x) / var_x;
        if a.abs() < TINY {
            est.b[j] = x;
            continue;
        }
        est.a[j] = a;
        est.b[j] = x - g / a;
    }
    est
}

/// `u* = min(1, a(x̄ − b)²/(ηΣ))` for `a > 0`, else 1.
pub fn csgd_policy(est: &RegressionEstimate, x_bar: &[f64], eta: f64) -> Vec<f64> {
    (0..est.a.len())
        .map(|j| {
            let a = est.a[j];
            if a <= 0.0 {
                return 1.0;
            }
            let es = eta * est.sigma[j];
            if es < TINY {
                return 1.0;
            }
            (a * (x_bar[j] - est.b[j]).powi(2) / es).clamp(0.0, 1.0)
        })
        .collect()
}

/// `μ* = min(max(0, 1 − 2√(aη)), max(0, 1 − ηΣ/(2a(x − b)²)))` for `a > 0`, else 1.
pub fn cmsgd_policy(est: &RegressionEstimate, x: &[f64], eta: f64) -> Vec<f64> {
    (0..est.a.len())
        .map(|j| {
            let a = est.a[j];
            if a <= 0.0 {
                return 1.0;
            }
            let cap = (1.0 - 2.0 * (a * eta).sqrt()).max(0.0);
            let r2 = (x[j] - est.b[j]).powi(2);
            let feedback = if r2 <= 0.0 {
                0.0
            } else {
                (1.0 - eta * est.sigma[j] / (2.0 * a * r2)).max(0.0)
            };
            cap.min(feedback).clamp(0.0, 1.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub beta_rule: BetaRule,
    pub bounds: BetaBounds,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            beta_rule: BetaRule::Clip,
            bounds: BetaBounds::default(),
        }
    }
}

/// Controlled SGD with per-dimension learning-rate factors `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Csgd {
    pub eta: f64,
    pub ema: EmaState,
    pub u: Vec<f64>,
    pub settings: ControlSettings,
}

impl Csgd {
    pub fn new(dim: usize, eta: f64, u0: f64, settings: ControlSettings) -> Result<Self> {
        check_rate(eta)?;
        check_unit("u0", u0)?;
        Ok(Self {
            eta,
            ema: EmaState::new(dim, settings.bounds.min),
            u: vec![u0; dim],
            settings,
        })
    }
}

fn check_rate(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("eta", "learning rate must be positive"))
    }
}

fn check_unit(arg: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(arg, "must lie in [0, 1]"))
    }
}

impl Optimizer for Csgd {
    fn name(&self) -> &'static str {
        "csgd"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        ema_update(&mut self.ema, x, g)?;
        let est = regress_quadratic(&self.ema);
        let target = csgd_policy(&est, &self.ema.x_bar, self.eta);
        let next_beta = beta_heuristic(&self.ema, self.settings.beta_rule, self.settings.bounds);
        for j in 0..x.len() {
            let u = self.u[j];
            let b = self.ema.beta[j];
            self.u[j] = (b * u + (1.0 - b) * target[j]).clamp(0.0, 1.0);
            x[j] -= self.eta * u * g[j];
        }
        self.ema.beta = next_beta;
        ensure_finite("iterate", x)
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            mean_u: Some(mean(&self.u)),
            mean_mu: None,
            mean_beta: Some(mean(&self.ema.beta)),
        }
    }
}

/// Controlled momentum SGD with per-dimension momenta `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmsgd {
    pub eta: f64,
    pub ema: EmaState,
    pub mu: Vec<f64>,
    pub v: Vec<f64>,
    pub settings: ControlSettings,
}

impl Cmsgd {
    pub fn new(dim: usize, eta: f64, mu0: f64, settings: ControlSettings) -> Result<Self> {
        check_rate(eta)?;
        check_unit("mu0", mu0)?;
        Ok(Self {
            eta,
            ema: EmaState::new(dim, settings.bounds.min),
            mu: vec![mu0; dim],
            v: vec![0.0; dim],
            settings,
        })
    }
}

impl Optimizer for Cmsgd {
    fn name(&self) -> &'static str {
        "cmsgd"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        ema_update(&mut self.ema, x, g)?;
        let est = regress_quadratic(&self.ema);
        let target = cmsgd_policy(&est, x, self.eta);
        let next_beta = beta_heuristic(&self.ema, self.settings.beta_rule, self.settings.bounds);
        for j in 0..x.len() {
            let mu = self.mu[j];
            let b = self.ema.beta[j];
            self.mu[j] = (b * mu + (1.0 - b) * target[j]).clamp(0.0, 1.0);
            self.v[j] = mu * self.v[j] - self.eta * g[j];
            x[j] += self.v[j];
        }
        self.ema.beta = next_beta;
        ensure_finite("iterate", x)
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            mean_u: None,
            mean_mu: Some(mean(&self.mu)),
            mean_beta: Some(mean(&self.ema.beta)),
        }
    }
}

pub const OPTIMIZER_NAMES: &[&str] = &["sgd", "msgd", "msgd-a", "csgd", "cmsgd", "adagrad", "adam"];

/// Flat hyper-parameter block addressed by optimizer name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default)]
    pub beta_rule: BetaRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(name: impl Into<String>, eta: f64) -> Self {
        Self {
            name: name.into(),
            eta,
            mu: None,
            mu_max: None,
            u0: None,
            mu0: None,
            beta1: None,
            beta2: None,
            eps: None,
            beta_rule: BetaRule::Clip,
            beta_min: None,
            beta_max: None,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_u0(mut self, u0: f64) -> Self {
        self.u0 = Some(u0);
        self
    }

    pub fn with_mu0(mut self, mu0: f64) -> Self {
        self.mu0 = Some(mu0);
        self
    }

    fn settings(&self) -> Result<ControlSettings> {
        let d = BetaBounds::default();
        let bounds = BetaBounds {
            min: self.beta_min.unwrap_or(d.min),
            max: self.beta_max.unwrap_or(d.max),
        };
        if !(0.0 <= bounds.min && bounds.min <= bounds.max && bounds.max < 1.0) {
            return Err(Error::invalid("beta_min", "need 0 <= beta_min <= beta_max < 1"));
        }
        Ok(ControlSettings {
            beta_rule: self.beta_rule,
            bounds,
        })
    }

    pub fn build(&self, dim: usize) -> Result<Box<dyn Optimizer>> {
        let eps = self.eps.unwrap_or(1e-8);
        Ok(match self.name.as_str() {
            "sgd" => Box::new(Sgd::new(self.eta)?),
            "msgd" => Box::new(Msgd::new(dim, self.eta, self.mu.unwrap_or(0.9))?),
            "msgd-a" => Box::new(MsgdAnnealed::new(dim, self.eta, self.mu_max.unwrap_or(0.999))?),
            "csgd" => Box::new(Csgd::new(dim, self.eta, self.u0.unwrap_or(1.0), self.settings()?)?),
            "cmsgd" => Box::new(Cmsgd::new(dim, self.eta, self.mu0.unwrap_or(0.0), self.settings()?)?),
            "adagrad" => Box::new(Adagrad::new(dim, self.eta, eps)?),
            "adam" => Box::new(Adam::new(
                dim,
                self.eta,
                self.beta1.unwrap_or(0.9),
                self.beta2.unwrap_or(0.999),
                eps,
            )?),
            other => {
                return Err(Error::invalid(
                    "name",
                    format!("unknown optimizer `{other}`; expected one of {}", OPTIMIZER_NAMES.join(", ")),
                ))
            }
        })
    }
}
