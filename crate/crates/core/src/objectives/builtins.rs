use nalgebra::DMatrix;

use super::{AffineSamples, GradientStructure, SampleLoss};
use crate::error::{Error, Result};

/// `f₁ = (x−1)² − 1`, `f₂ = (x+1)² − 1`, so `f = x²` and `Σ ≡ 4`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic1d;

impl Quadratic1d {
    fn shift(i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl SampleLoss for Quadratic1d {
    fn n_samples(&self) -> usize {
        2
    }
    fn dim(&self) -> usize {
        1
    }
    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        let r = x[0] - Self::shift(i);
        r * r - 1.0
    }
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (x[0] - Self::shift(i));
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
    }
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 2.0))
    }
    fn structure(&self) -> GradientStructure {
        GradientStructure::AffineSamples(AffineSamples {
            slope: vec![2.0],
            intercepts: vec![vec![-2.0], vec![2.0]],
        })
    }
}

/// `f₁ = x₁²`, `f₂ = x₂²`, `f₃ = δ cos(x₁/ε) cos(x₂/ε)`.
#[derive(Debug, Clone, Copy)]
pub struct EggCarton {
    pub delta: f64,
    pub epsilon: f64,
}

impl EggCarton {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self> {
        if epsilon == 0.0 || !epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be non-zero and finite"));
        }
        if !delta.is_finite() {
            return Err(Error::NonFinite("delta"));
        }
        Ok(Self { delta, epsilon })
    }
}

impl SampleLoss for EggCarton {
    fn n_samples(&self) -> usize {
        3
    }
    fn dim(&self) -> usize {
        2
    }
    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        match i {
            0 => x[0] * x[0],
            1 => x[1] * x[1],
            _ => self.delta * (x[0] / self.epsilon).cos() * (x[1] / self.epsilon).cos(),
        }
    }
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match i {
            0 => {
                out[0] = 2.0 * x[0];
                out[1] = 0.0;
            }
            1 => {
                out[0] = 0.0;
                out[1] = 2.0 * x[1];
            }
            _ => {
                let (s1, c1) = (x[0] / self.epsilon).sin_cos();
                let (s2, c2) = (x[1] / self.epsilon).sin_cos();
                let k = self.delta / self.epsilon;
                out[0] = -k * s1 * c2;
                out[1] = -k * c1 * s2;
            }
        }
    }
    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        let (s1, c1) = (x[0] / self.epsilon).sin_cos();
        let (s2, c2) = (x[1] / self.epsilon).sin_cos();
        let k = self.delta / self.epsilon;
        out[0] = (2.0 * x[0] - k * s1 * c2) / 3.0;
        out[1] = (2.0 * x[1] - k * c1 * s2) / 3.0;
    }
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (s1, c1) = (x[0] / self.epsilon).sin_cos();
        let (s2, c2) = (x[1] / self.epsilon).sin_cos();
        let k = self.delta / (self.epsilon * self.epsilon);
        let diag = |v: f64| (2.0 - k * v) / 3.0;
        let off = k * s1 * s2 / 3.0;
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[diag(c1 * c2), off, off, diag(c1 * c2)],
        ))
    }
}

/// `f_i = (x − γ_i)²`, `γ ∈ {+1, −1}`, so `f = x² + 1`.
#[derive(Debug, Clone, Copy)]
pub struct WeakConvex;

fn gamma(i: usize) -> f64 {
    if i == 0 {
        1.0
    } else {
        -1.0
    }
}

impl SampleLoss for WeakConvex {
    fn n_samples(&self) -> usize {
        2
    }
    fn dim(&self) -> usize {
        1
    }
    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        let r = x[0] - gamma(i);
        r * r
    }
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (x[0] - gamma(i));
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + 1.0
    }
    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
    }
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 2.0))
    }
    fn structure(&self) -> GradientStructure {
        GradientStructure::AffineSamples(AffineSamples {
            slope: vec![2.0],
            intercepts: vec![vec![-2.0], vec![2.0]],
        })
    }
}

/// `f_i = (x − γ_i)² + γ_i x³`; the cubic terms cancel in `f = x² + 1`.
#[derive(Debug, Clone, Copy)]
pub struct WeakNonconvex;

impl SampleLoss for WeakNonconvex {
    fn n_samples(&self) -> usize {
        2
    }
    fn dim(&self) -> usize {
        1
    }
    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        let g = gamma(i);
        let r = x[0] - g;
        r * r + g * x[0] * x[0] * x[0]
    }
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let g = gamma(i);
        out[0] = 2.0 * (x[0] - g) + 3.0 * g * x[0] * x[0];
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + 1.0
    }
    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
    }
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 2.0))
    }
    fn structure(&self) -> GradientStructure {
        GradientStructure::AffineMean {
            slope: vec![2.0],
            intercept: vec![0.0],
        }
    }
}

/// Separable quadratic `f = ½ Σ_j a_j (x_j − b_j)²` with constant diagonal noise.
///
/// Sample `i ∈ 0..2^d` has gradient `a_j (x_j − b_j) + s_j √σ_j` where `s_j = ±1`
/// is bit `j` of `i`. Each dimension is the symmetric two-sample construction and
/// the signs are independent across dimensions, so `Σ(x) = diag(σ)`.
#[derive(Debug, Clone)]
pub struct DiagQuadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    root_sigma: Vec<f64>,
}

/// Largest dimension accepted by [`DiagQuadratic`] (the sample count is `2^d`).
pub const DIAG_QUADRATIC_MAX_DIM: usize = 16;

impl DiagQuadratic {
    pub fn new(a: &[f64], b: &[f64], sigma: &[f64]) -> Result<Self> {
        let d = a.len();
        if d == 0 {
            return Err(Error::invalid("a", "empty"));
        }
        if d > DIAG_QUADRATIC_MAX_DIM {
            return Err(Error::invalid(
                "a",
                format!("dimension {d} exceeds {DIAG_QUADRATIC_MAX_DIM}"),
            ));
        }
        for (name, v) in [("b", b), ("sigma", sigma)] {
            if v.len() != d {
                return Err(Error::invalid(
                    name,
                    format!("length {} does not match a ({d})", v.len()),
                ));
            }
        }
        if a.iter().chain(b).chain(sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diag-quadratic parameters"));
        }
        if sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::invalid("sigma", "entries must be >= 0"));
        }
        Ok(Self {
            a: a.to_vec(),
            b: b.to_vec(),
            root_sigma: sigma.iter().map(|s| s.sqrt()).collect(),
        })
    }

    fn sign(i: usize, j: usize) -> f64 {
        if (i >> j) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn curvature(&self) -> &[f64] {
        &self.a
    }
    pub fn optimum(&self) -> &[f64] {
        &self.b
    }
}

impl SampleLoss for DiagQuadratic {
    fn n_samples(&self) -> usize {
        1 << self.a.len()
    }
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        (0..self.a.len())
            .map(|j| {
                let r = x[j] - self.b[j];
                0.5 * self.a[j] * r * r + Self::sign(i, j) * self.root_sigma[j] * r
            })
            .sum()
    }
    fn sample_grad(&self, i: usize, x: &[f64], out: &mut [f64]) {
        for j in 0..self.a.len() {
            out[j] = self.a[j] * (x[j] - self.b[j]) + Self::sign(i, j) * self.root_sigma[j];
        }
    }
    fn value(&self, x: &[f64]) -> f64 {
        (0..self.a.len())
            .map(|j| 0.5 * self.a[j] * (x[j] - self.b[j]).powi(2))
            .sum()
    }
    fn full_grad(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.a.len() {
            out[j] = self.a[j] * (x[j] - self.b[j]);
        }
    }
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            &self.a,
        )))
    }
    fn structure(&self) -> GradientStructure {
        let d = self.a.len();
        let intercepts = (0..self.n_samples())
            .map(|i| {
                (0..d)
                    .map(|j| -self.a[j] * self.b[j] + Self::sign(i, j) * self.root_sigma[j])
                    .collect()
            })
            .collect();
        GradientStructure::AffineSamples(AffineSamples {
            slope: self.a.clone(),
            intercepts,
        })
    }
}
