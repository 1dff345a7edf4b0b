//! Leading-order small-noise expansion of the SME: gradient-flow mean and the
//! linearised covariance equation, giving `X_t ≈ N(X₀(t), η S_t)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{max_asymmetry, symmetrize, SYMMETRY_TOL};
use crate::objectives::{
    gradient_covariance_into, hessian, CovarianceScratch, FiniteSumObjective,
};
use crate::ode::{grid_steps, rk4_integrate, OdePath, Rk4};
use crate::sme::GaussianSummary;

/// Default RK4 step for an SME with learning rate `eta`.
pub fn default_step(eta: f64) -> f64 {
    eta.min(1e-3)
}

/// `ẋ = −∇f(x)` on `[0, horizon]`.
pub fn integrate_gradient_flow(
    obj: &FiniteSumObjective,
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<OdePath> {
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    ensure_finite("x0", x0)?;
    let loss = obj.loss();
    rk4_integrate(
        |_, x, dx| {
            loss.full_grad(x, dx);
            dx.iter_mut().for_each(|v| *v = -*v);
        },
        x0,
        horizon,
        h,
    )
}

/// `Ṡ = −S H_t − H_t S + Σ_t`, `S₀ = 0`, with `H_t`, `Σ_t` evaluated along the
/// mean path. Returns one matrix per grid point of the integration.
pub fn integrate_covariance_ode(
    obj: &FiniteSumObjective,
    mean: &OdePath,
    h: f64,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("h", "step must be positive and finite"));
    }
    let d = obj.dim();
    let horizon = *mean.times.last().expect("non-empty path");
    // probe once so a missing Hessian surfaces before integration
    hessian(obj, &mean.states[0])?;
    let steps = grid_steps(horizon, h);
    let h_eff = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let mut x = vec![0.0; d];
    let mut sigma = DMatrix::zeros(d, d);
    let mut scratch = CovarianceScratch::new(d);
    let mut failure: Option<Error> = None;
    let mut rhs = |t: f64, s: &[f64], ds: &mut [f64]| {
        mean.interpolate(t, &mut x);
        let hm = match hessian(obj, &x) {
            Ok(m) => m,
            Err(e) => {
                failure.get_or_insert(e);
                ds.fill(f64::NAN);
                return;
            }
        };
        gradient_covariance_into(obj.loss(), &x, &mut sigma, &mut scratch);
        let sm = DMatrix::from_column_slice(d, d, s);
        let sh = &sm * &hm;
        for c in 0..d {
            for r in 0..d {
                // (S H)ᵀ = H S for symmetric S, H
                ds[r + c * d] = -sh[(r, c)] - sh[(c, r)] + sigma[(r, c)];
            }
        }
    };
    let mut rk = Rk4::new(d * d);
    let mut s = vec![0.0; d * d];
    let mut times = Vec::with_capacity(steps + 1);
    let mut out = Vec::with_capacity(steps + 1);
    times.push(0.0);
    out.push(DMatrix::zeros(d, d));
    for k in 0..steps {
        rk.step(&mut rhs, k as f64 * h_eff, &mut s, h_eff);
        let mut m = DMatrix::from_column_slice(d, d, &s);
        symmetrize(&mut m);
        s.copy_from_slice(m.as_slice());
        if s.iter().any(|v| !v.is_finite()) {
            return Err(failure.unwrap_or(Error::Diverged {
                step: k + 1,
                replica: None,
            }));
        }
        times.push((k + 1) as f64 * h_eff);
        out.push(m);
    }
    Ok((times, out))
}

/// Mean path `X₀` and scaled covariance `S` on a shared uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticPath {
    pub eta: f64,
    pub times: Vec<f64>,
    pub x0_path: Vec<DVector<f64>>,
    pub s_path: Vec<DMatrix<f64>>,
}

impl AsymptoticPath {
    pub fn compute(
        obj: &FiniteSumObjective,
        eta: f64,
        x0: &[f64],
        horizon: f64,
        h: Option<f64>,
    ) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::invalid("eta", "learning rate must be positive"));
        }
        let h = h.unwrap_or_else(|| default_step(eta));
        let mean = integrate_gradient_flow(obj, x0, horizon, h)?;
        let (times, s_path) = integrate_covariance_ode(obj, &mean, h)?;
        debug_assert_eq!(times.len(), mean.times.len());
        Ok(Self {
            eta,
            times,
            x0_path: mean.states.iter().map(|s| DVector::from_column_slice(s)).collect(),
            s_path,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty path")
    }

    pub fn dim(&self) -> usize {
        self.x0_path[0].len()
    }

    /// `N(X₀(t), η S_t)`, linearly interpolated between grid points.
    pub fn distribution_at(&self, t: f64) -> Result<GaussianSummary> {
        let horizon = self.horizon();
        if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
            return Err(Error::OutOfHorizon { t, horizon });
        }
        let n = self.times.len();
        if n == 1 {
            return Ok(GaussianSummary {
                t,
                mean: self.x0_path[0].clone(),
                covariance: &self.s_path[0] * self.eta,
            });
        }
        let h = self.times[1] - self.times[0];
        let pos = t / h;
        let i = (pos.floor() as usize).min(n - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        let mean = &self.x0_path[i] * (1.0 - w) + &self.x0_path[i + 1] * w;
        let s = &self.s_path[i] * (1.0 - w) + &self.s_path[i + 1] * w;
        Ok(GaussianSummary {
            t,
            mean,
            covariance: s * self.eta,
        })
    }
}

/// Leading-order Gaussian approximation of the SME marginal at time `t`.
pub fn leading_order_distribution(
    obj: &FiniteSumObjective,
    eta: f64,
    x0: &[f64],
    t: f64,
) -> Result<GaussianSummary> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::OutOfHorizon { t, horizon: f64::INFINITY });
    }
    AsymptoticPath::compute(obj, eta, x0, t, None)?.distribution_at(t)
}

/// Unique symmetric `S` with `S H + H S = Σ`, for symmetric positive definite `H`.
pub fn lyapunov_steady_state(h: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if h.ncols() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma.nrows().max(h.ncols()),
        });
    }
    ensure_finite("H", h.as_slice())?;
    ensure_finite("Sigma", sigma.as_slice())?;
    let asym = max_asymmetry(h);
    let scale = h.amax().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut hs = h.clone();
    symmetrize(&mut hs);
    if Cholesky::new(hs.clone()).is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    // (I ⊗ H + H ⊗ I) vec S = vec Σ, column-major vec
    let eye = DMatrix::<f64>::identity(d, d);
    let op = eye.kronecker(&hs) + hs.kronecker(&eye);
    let rhs = DVector::from_column_slice(sigma.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(Error::NotPositiveDefinite)?;
    let mut s = DMatrix::from_column_slice(d, d, sol.as_slice());
    symmetrize(&mut s);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_diag_quadratic, make_eggcarton, make_quadratic1d};
    use crate::sme::quadratic_sme_distribution;
    use proptest::prelude::*;

    #[test]
    fn quadratic_mean_is_exponential() {
        let q = make_quadratic1d();
        let p = integrate_gradient_flow(&q, &[1.3], 2.0, 1e-3).unwrap();
        for (t, x) in p.times.iter().zip(&p.states) {
            assert!((x[0] - 1.3 * (-2.0 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn critical_point_is_fixed() {
        let e = make_eggcarton(0.1, 0.2).unwrap();
        let p = integrate_gradient_flow(&e, &[0.0, 0.0], 1.0, 1e-2).unwrap();
        assert!(p.states.iter().all(|x| x[0] == 0.0 && x[1] == 0.0));
    }

    #[test]
    fn eggcarton_flow_descends() {
        let e = make_eggcarton(0.1, 0.1).unwrap();
        let p = integrate_gradient_flow(&e, &[1.0, 1.5], 3.0, 1e-3).unwrap();
        let f: Vec<f64> = p.states.iter().map(|x| e.value(x).unwrap()).collect();
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    }

    #[test]
    fn quadratic_covariance_closed_form() {
        let q = make_quadratic1d();
        let eta = 1e-2;
        let path = AsymptoticPath::compute(&q, eta, &[1.0], 3.0, None).unwrap();
        assert_eq!(path.s_path[0][(0, 0)], 0.0);
        assert_eq!(path.x0_path[0][0], 1.0);
        for (t, s) in path.times.iter().zip(&path.s_path) {
            assert!((s[(0, 0)] - (1.0 - (-4.0 * t).exp())).abs() < 1e-9);
        }
        // within O(η²) of the exact OU variance
        for t in [0.1, 0.5, 1.0, 3.0] {
            let lo = path.distribution_at(t).unwrap();
            let ou = quadratic_sme_distribution(eta, 1.0, t).unwrap();
            assert!((lo.covariance[(0, 0)] - ou.covariance[(0, 0)]).abs() < 2.0 * eta * eta);
        }
        let d0 = path.distribution_at(0.0).unwrap();
        assert_eq!((d0.mean[0], d0.covariance[(0, 0)]), (1.0, 0.0));
        assert!(matches!(path.distribution_at(3.5), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn noiseless_covariance_vanishes() {
        let q = make_diag_quadratic(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let p = AsymptoticPath::compute(&q, 0.01, &[1.0, -1.0], 1.0, None).unwrap();
        assert!(p.s_path.iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn constant_hessian_converges_to_lyapunov() {
        let q = make_diag_quadratic(&[1.0, 3.0], &[0.5, -0.5], &[2.0, 0.5]).unwrap();
        let p = AsymptoticPath::compute(&q, 1e-3, &[1.0, 1.0], 8.0, Some(1e-2)).unwrap();
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let sig = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let s_inf = lyapunov_steady_state(&h, &sig).unwrap();
        let err = |i: usize| (&p.s_path[i] - &s_inf).norm();
        let n = p.s_path.len();
        assert!(err(n - 1) < 1e-6);
        assert!(err(n / 2) < err(n / 4) && err(n - 1) < err(n / 2));
        assert!((s_inf[(0, 0)] - 1.0).abs() < 1e-12 && (s_inf[(1, 1)] - 0.5 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_identities() {
        let s = lyapunov_steady_state(&DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert!((s[(0, 0)] - 3.0 / 8.0).abs() < 1e-15);
        let sig = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let s = lyapunov_steady_state(&DMatrix::identity(2, 2), &sig).unwrap();
        assert!((s - &sig / 2.0).amax() < 1e-15);
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(lyapunov_steady_state(&indef, &sig), Err(Error::NotPositiveDefinite)));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(lyapunov_steady_state(&asym, &sig), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn indefinite_hessian_still_integrates() {
        // saddle region of a strongly wrinkled egg carton
        let e = make_eggcarton(1.0, 0.2).unwrap();
        let p = AsymptoticPath::compute(&e, 1e-2, &[0.1, 0.05], 0.2, None).unwrap();
        assert!(p.s_path.iter().all(|s| max_asymmetry(s) < 1e-12));
    }

    fn spd(d: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
        (
            prop::collection::vec(-1.0f64..1.0, d * d),
            prop::collection::vec(-1.0f64..1.0, d * d),
        )
            .prop_map(move |(a, b)| {
                let a = DMatrix::from_vec(d, d, a);
                let b = DMatrix::from_vec(d, d, b);
                let h = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
                (h, &b * b.transpose())
            })
    }

    proptest! {
        #[test]
        fn lyapunov_residual_is_small((h, sig) in spd(3)) {
            let s = lyapunov_steady_state(&h, &sig).unwrap();
            let r = &s * &h + &h * &s - &sig;
            prop_assert!(r.norm() < 1e-10);
            // ‖S‖ ≤ ‖Σ‖ / (2 λ_min(H))
            let lmin = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues.min();
            let ns = crate::linalg::sym_operator_norm(&s);
            prop_assert!(ns <= crate::linalg::sym_operator_norm(&sig) / (2.0 * lmin) * (1.0 + 1e-9) + 1e-12);
        }
    }
}
