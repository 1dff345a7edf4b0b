//! Finite-sum objectives `f = (1/n) Σ f_i` with per-sample gradient access.
//!
//! Samples are addressed by a zero-based index `0..n`. Simulators draw the
//! indices themselves, so all randomness lives with the caller.

mod builtins;
mod mlp;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::symmetrize;

pub use builtins::{DiagQuadratic, EggCarton, Quadratic1d, WeakConvex, WeakNonconvex};
pub use mlp::{MlpClassifier, MlpOptions};

/// Per-dimension affine sample gradients: `∂_j f_i(x) = slope_j x_j + intercepts[i][j]`.
///
/// Noise is then independent of `x`, which is what the exact moment oracles need.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSamples {
    pub slope: Vec<f64>,
    pub intercepts: Vec<Vec<f64>>,
}

impl AffineSamples {
    /// Column `j` of the intercept table.
    pub fn intercepts_of(&self, j: usize) -> Vec<f64> {
        self.intercepts.iter().map(|c| c[j]).collect()
    }
}

/// Structural facts about an objective that closed-form oracles can exploit.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientStructure {
    General,
    /// Every sample gradient is affine with a common per-dimension slope.
    AffineSamples(AffineSamples),
    /// Only the full gradient is affine: `∂_j f(x) = slope_j x_j + intercept_j`.
    AffineMean { slope: Vec<f64>, intercept: Vec<f64> },
}

/// Per-sample access to a finite-sum loss.
///
/// Implementors must keep `full_grad` equal to the average of `sample_grad`.
pub trait SampleLoss: Send + Sync {
    fn n_samples(&self) -> usize;
    fn dim(&self) -> usize;
    fn sample_value(&self, i: usize, x: &[f64]) -> f64;
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]);

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n_samples();
        (0..n).map(|i| self.sample_value(i, x)).sum::<f64>() / n as f64
    }

    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_samples();
        let mut g = vec![0.0; out.len()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.sample_grad(i, x, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// Analytic Hessian of `f`, if the objective has one.
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn structure(&self) -> GradientStructure {
        GradientStructure::General
    }

    /// A sensible starting point for training, if the objective defines one.
    fn initial_point(&self, _seed: u64) -> Option<Vec<f64>> {
        None
    }
}

/// A named, immutable finite-sum objective. Cloning shares the underlying loss.
#[derive(Clone)]
pub struct FiniteSumObjective {
    name: String,
    loss: Arc<dyn SampleLoss>,
}

impl fmt::Debug for FiniteSumObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteSumObjective")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("d", &self.dim())
            .finish()
    }
}

impl FiniteSumObjective {
    pub fn new(name: impl Into<String>, loss: impl SampleLoss + 'static) -> Result<Self> {
        if loss.n_samples() == 0 {
            return Err(Error::invalid("n", "objective needs at least one sample"));
        }
        if loss.dim() == 0 {
            return Err(Error::invalid("d", "objective needs at least one dimension"));
        }
        Ok(Self {
            name: name.into(),
            loss: Arc::new(loss),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.loss.n_samples()
    }
    pub fn dim(&self) -> usize {
        self.loss.dim()
    }
    pub fn loss(&self) -> &dyn SampleLoss {
        self.loss.as_ref()
    }
    pub fn structure(&self) -> GradientStructure {
        self.loss.structure()
    }
    pub fn has_analytic_hessian(&self) -> bool {
        self.loss.hessian(&vec![0.0; self.dim()]).is_some()
    }
    pub fn initial_point(&self, seed: u64) -> Option<Vec<f64>> {
        self.loss.initial_point(seed)
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        ensure_finite("x", x)
    }

    fn check_i(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::SampleIndex { index: i, n: self.n() });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.loss.value(x))
    }

    pub fn sample_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_i(i)?;
        Ok(self.loss.sample_value(i, x))
    }

    pub fn sample_gradient(&self, i: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.check_x(x)?;
        self.check_i(i)?;
        let mut g = DVector::zeros(self.dim());
        self.loss.sample_grad(i, x, g.as_mut_slice());
        Ok(g)
    }
}

/// `∇f(x) = (1/n) Σ_i ∇f_i(x)`.
pub fn full_gradient(obj: &FiniteSumObjective, x: &[f64]) -> Result<DVector<f64>> {
    obj.check_x(x)?;
    let mut g = DVector::zeros(obj.dim());
    obj.loss.full_grad(x, g.as_mut_slice());
    Ok(g)
}

/// Gradient-noise covariance `Σ(x) = (1/n) Σ_i (∇f − ∇f_i)(∇f − ∇f_i)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCovariance {
    pub x: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Reusable buffers for evaluating `Σ(x)` in hot loops.
pub struct CovarianceScratch {
    mean: Vec<f64>,
    g: Vec<f64>,
}

impl CovarianceScratch {
    pub fn new(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            g: vec![0.0; d],
        }
    }
}

/// Allocation-free evaluation of `Σ(x)` into `out` (unchecked input).
pub fn gradient_covariance_into(
    loss: &dyn SampleLoss,
    x: &[f64],
    out: &mut DMatrix<f64>,
    scratch: &mut CovarianceScratch,
) {
    let n = loss.n_samples();
    let d = loss.dim();
    out.fill(0.0);
    if n == 1 {
        return;
    }
    loss.full_grad(x, &mut scratch.mean);
    for i in 0..n {
        loss.sample_grad(i, x, &mut scratch.g);
        for (gj, mj) in scratch.g.iter_mut().zip(&scratch.mean) {
            *gj -= mj;
        }
        for r in 0..d {
            let gr = scratch.g[r];
            if gr == 0.0 {
                continue;
            }
            for c in r..d {
                out[(r, c)] += gr * scratch.g[c];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for r in 0..d {
        for c in r..d {
            let v = out[(r, c)] * inv;
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
}

pub fn gradient_covariance(obj: &FiniteSumObjective, x: &[f64]) -> Result<GradCovariance> {
    obj.check_x(x)?;
    let d = obj.dim();
    let mut sigma = DMatrix::zeros(d, d);
    gradient_covariance_into(obj.loss(), x, &mut sigma, &mut CovarianceScratch::new(d));
    Ok(GradCovariance {
        x: DVector::from_column_slice(x),
        sigma,
    })
}

/// Central-difference step used by the numeric Hessian fallback.
pub fn fd_step(xj: f64) -> f64 {
    1e-5f64.max(1e-7 * xj.abs())
}

/// Central finite differences of the full gradient, symmetrized.
pub fn fd_hessian(loss: &dyn SampleLoss, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let step = fd_step(x[j]);
        xp[j] = x[j] + step;
        loss.full_grad(&xp, &mut gp);
        xp[j] = x[j] - step;
        loss.full_grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    symmetrize(&mut h);
    h
}

/// Hessian of `f`: analytic when the objective provides one, else finite differences.
pub fn hessian(obj: &FiniteSumObjective, x: &[f64]) -> Result<DMatrix<f64>> {
    obj.check_x(x)?;
    let h = obj.loss.hessian(x).unwrap_or_else(|| fd_hessian(obj.loss(), x));
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingHessian(obj.name.clone()));
    }
    Ok(h)
}

pub fn make_quadratic1d() -> FiniteSumObjective {
    FiniteSumObjective::new("quadratic1d", Quadratic1d).expect("static construction")
}

pub fn make_eggcarton(delta: f64, epsilon: f64) -> Result<FiniteSumObjective> {
    FiniteSumObjective::new("eggcarton", EggCarton::new(delta, epsilon)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakFamily {
    Convex,
    Nonconvex,
}

impl WeakFamily {
    pub fn name(self) -> &'static str {
        match self {
            WeakFamily::Convex => "weak-convex",
            WeakFamily::Nonconvex => "weak-nonconvex",
        }
    }
}

/// The two weak-error test families and their default test functions
/// (`x + x² + x³` for the convex family, `x` for the nonconvex one).
pub fn make_weak_error_family(
    kind: WeakFamily,
) -> (FiniteSumObjective, crate::weak_error::TestFunction) {
    use crate::weak_error::TestFunction;
    match kind {
        WeakFamily::Convex => (
            FiniteSumObjective::new(kind.name(), WeakConvex).expect("static construction"),
            TestFunction::new(vec![0.0, 1.0, 1.0, 1.0]).expect("degree 3"),
        ),
        WeakFamily::Nonconvex => (
            FiniteSumObjective::new(kind.name(), WeakNonconvex).expect("static construction"),
            TestFunction::new(vec![0.0, 1.0]).expect("degree 1"),
        ),
    }
}

pub fn make_diag_quadratic(a: &[f64], b: &[f64], sigma: &[f64]) -> Result<FiniteSumObjective> {
    FiniteSumObjective::new("diag-quadratic", DiagQuadratic::new(a, b, sigma)?)
}

pub fn make_synthetic_classifier(
    layers: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<FiniteSumObjective> {
    make_synthetic_classifier_with(layers, n_samples, seed, MlpOptions::default())
}

pub fn make_synthetic_classifier_with(
    layers: &[usize],
    n_samples: usize,
    seed: u64,
    opts: MlpOptions,
) -> Result<FiniteSumObjective> {
    FiniteSumObjective::new(
        "synthetic-mlp",
        MlpClassifier::new(layers, n_samples, seed, opts)?,
    )
}

/// Names accepted by configuration files.
pub const BUILTIN_NAMES: &[&str] = &[
    "quadratic1d",
    "eggcarton",
    "weak-convex",
    "weak-nonconvex",
    "diag-quadratic",
    "synthetic-mlp",
];
