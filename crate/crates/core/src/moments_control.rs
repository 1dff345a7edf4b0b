//! Moment dynamics of SGD and momentum SGD on the quadratic `½a(x−b)²`, and
//! the optimal feedback laws for learning-rate and momentum control.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{grid_steps, Rk4};

const TINY: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub eta: f64,
}

impl QuadraticModel {
    pub fn new(a: f64, b: f64, sigma: f64, eta: f64) -> Result<Self> {
        let m = Self { a, b, sigma, eta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::NonFinite("quadratic model"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "noise variance must be finite and >= 0"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "learning rate must be positive"));
        }
        Ok(())
    }

    pub fn eta_sigma(&self) -> f64 {
        self.eta * self.sigma
    }

    /// `½a(x−b)²`
    pub fn loss(&self, x: f64) -> f64 {
        0.5 * self.a * (x - self.b).powi(2)
    }
}

/// Scalar moment path with the control applied at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub control: Vec<f64>,
}

impl ControlledPath {
    pub fn last(&self) -> f64 {
        *self.m.last().expect("non-empty path")
    }
}

fn check_step(h: f64, horizon: f64) -> Result<(usize, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("h", "step must be positive and finite"));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon", "must be non-negative and finite"));
    }
    let steps = grid_steps(horizon, h);
    Ok((steps, if steps == 0 { 0.0 } else { horizon / steps as f64 }))
}

/// Integrate a scalar controlled ODE `ṁ = F(m, c(t, m))` with RK4, evaluating the
/// control at every stage.
fn integrate_scalar<C, F>(control: C, rhs: F, m0: f64, horizon: f64, h: f64) -> Result<ControlledPath>
where
    C: Fn(f64, f64) -> f64,
    F: Fn(f64, f64) -> Result<f64>,
{
    let (steps, h) = check_step(h, horizon)?;
    let mut failure = None;
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| {
        let c = control(t, y[0]);
        dy[0] = match rhs(y[0], c) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        };
    };
    let mut rk = Rk4::new(1);
    let mut y = [m0];
    let mut path = ControlledPath {
        times: Vec::with_capacity(steps + 1),
        m: Vec::with_capacity(steps + 1),
        control: Vec::with_capacity(steps + 1),
    };
    path.times.push(0.0);
    path.m.push(m0);
    path.control.push(control(0.0, m0));
    for k in 0..steps {
        rk.step(&mut f, k as f64 * h, &mut y, h);
        if !y[0].is_finite() {
            return Err(failure.take().unwrap_or(Error::Diverged {
                step: k + 1,
                replica: None,
            }));
        }
        let t = (k + 1) as f64 * h;
        path.times.push(t);
        path.m.push(y[0]);
        path.control.push(control(t, y[0]));
    }
    Ok(path)
}

/// `ṁ = −2a u m + ½ a η Σ u²` under the control `u(t, m)`, clamped to `[0, 1]`.
pub fn integrate_lr_moment<U>(
    model: &QuadraticModel,
    u: U,
    m0: f64,
    horizon: f64,
    h: f64,
) -> Result<ControlledPath>
where
    U: Fn(f64, f64) -> f64,
{
    model.validate()?;
    let QuadraticModel { a, .. } = *model;
    let es = model.eta_sigma();
    integrate_scalar(
        |t, m| u(t, m).clamp(0.0, 1.0),
        move |m, u| Ok(-2.0 * a * u * m + 0.5 * a * es * u * u),
        m0,
        horizon,
        h,
    )
}

/// Optimal learning-rate factor `u* = min(1, 2m/(ηΣ))` for `a > 0`, else 1.
pub fn optimal_u_feedback(m: f64, model: &QuadraticModel) -> f64 {
    if model.a <= 0.0 {
        return 1.0;
    }
    let es = model.eta_sigma();
    if es < TINY {
        return if m > 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * m / es).clamp(0.0, 1.0)
}

/// Switching time of the optimal learning-rate control from `m0`.
pub fn lr_transition_time(model: &QuadraticModel, m0: f64) -> Result<f64> {
    model.validate()?;
    if model.a <= 0.0 {
        return Err(Error::invalid("a", "annealing needs positive curvature"));
    }
    let es = model.eta_sigma();
    let ratio = if es < TINY { f64::INFINITY } else { 4.0 * m0 / es };
    if !(ratio > 1.0) || !ratio.is_finite() {
        return Err(Error::NoTransition {
            ratio,
            feedback: optimal_u_feedback(m0, model),
        });
    }
    Ok((ratio - 1.0).ln() / (2.0 * model.a))
}

/// Open-loop form of the optimal control: `1` up to `t*`, `1/(1 + a(t − t*))` after.
pub fn lr_annealing_schedule(t: f64, model: &QuadraticModel, m0: f64) -> Result<f64> {
    let t_star = lr_transition_time(model, m0)?;
    Ok(if t <= t_star {
        1.0
    } else {
        1.0 / (1.0 + model.a * (t - t_star))
    })
}

/// Closed-form `m_t` under the optimal control.
pub fn lr_optimal_moment(t: f64, model: &QuadraticModel, m0: f64) -> Result<f64> {
    let t_star = lr_transition_time(model, m0)?;
    let es = model.eta_sigma();
    let a = model.a;
    Ok(if t <= t_star {
        let d = (-2.0 * a * t).exp();
        m0 * d + 0.25 * es * (1.0 - d)
    } else {
        es / (2.0 + 2.0 * a * (t - t_star))
    })
}

/// Descent-to-fluctuation transition time of SGD on `quadratic1d` from `x0`.
pub fn transition_time_quadratic(eta: f64, x0: f64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", "learning rate must be positive"));
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("x0"));
    }
    Ok((1.0 + (eta + 1.0) / eta * x0 * x0).ln() / (4.0 * (1.0 + eta)))
}

/// `(E f(X), E V², E V f′(X))` for the momentum SME.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentStateM {
    pub ef: f64,
    pub ev2: f64,
    pub evg: f64,
}

impl MomentStateM {
    pub fn at_rest(model: &QuadraticModel, x0: f64) -> Self {
        Self {
            ef: model.loss(x0),
            ev2: 0.0,
            evg: 0.0,
        }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.ef, self.ev2, self.evg)
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            ef: v[0],
            ev2: v[1],
            evg: v[2],
        }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if (0.0..=1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::invalid("mu", "momentum must lie in [0, 1]"))
    }
}

/// `Ṁ = A(μ) M + B`.
pub fn momentum_system(mu: f64, model: &QuadraticModel) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    check_mu(mu)?;
    model.validate()?;
    Ok(momentum_system_unchecked(mu, model))
}

fn momentum_system_unchecked(mu: f64, model: &QuadraticModel) -> (Matrix3<f64>, Vector3<f64>) {
    let QuadraticModel { a, eta, .. } = *model;
    let damp = (1.0 - mu) / eta;
    // Itô on (f, V², V f′) with f′ = a(x − b), f″ = a
    let a_mat = Matrix3::new(
        0.0, 0.0, 1.0 / eta,
        0.0, -2.0 * damp, -2.0,
        -2.0 * a, a / eta, -damp,
    );
    (a_mat, Vector3::new(0.0, model.eta_sigma(), 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumPath {
    pub times: Vec<f64>,
    pub states: Vec<MomentStateM>,
    pub mu: Vec<f64>,
}

/// Integrate the momentum moment system under `μ(t, E f)`, clamped to `[0, 1]`.
pub fn integrate_momentum_moments<M>(
    model: &QuadraticModel,
    mu: M,
    m0: MomentStateM,
    horizon: f64,
    h: f64,
) -> Result<MomentumPath>
where
    M: Fn(f64, f64) -> f64,
{
    model.validate()?;
    let (steps, h) = check_step(h, horizon)?;
    let mu = |t: f64, ef: f64| mu(t, ef).clamp(0.0, 1.0);
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (a_mat, b) = momentum_system_unchecked(mu(t, y[0]), model);
        let r = a_mat * Vector3::new(y[0], y[1], y[2]) + b;
        dy.copy_from_slice(r.as_slice());
    };
    let mut rk = Rk4::new(3);
    let mut y = [m0.ef, m0.ev2, m0.evg];
    let mut path = MomentumPath {
        times: vec![0.0],
        states: vec![m0],
        mu: vec![mu(0.0, m0.ef)],
    };
    for k in 0..steps {
        rk.step(&mut f, k as f64 * h, &mut y, h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: k + 1,
                replica: None,
            });
        }
        let t = (k + 1) as f64 * h;
        path.times.push(t);
        path.states.push(MomentStateM::from_slice(&y));
        path.mu.push(mu(t, y[0]));
    }
    Ok(path)
}

/// Eigenvalue of `A(μ)` with the least negative real part,
/// `λ = −[(1−μ) − √((1−μ)² − 4aη)]/η` (principal root).
pub fn dominant_eigenvalue(mu: f64, model: &QuadraticModel) -> Result<Complex64> {
    check_mu(mu)?;
    if model.a <= 0.0 {
        return Err(Error::invalid("a", "needs positive curvature"));
    }
    Ok(dominant_eigenvalue_unchecked(mu, model))
}

fn dominant_eigenvalue_unchecked(mu: f64, model: &QuadraticModel) -> Complex64 {
    let c = 1.0 - mu;
    let disc = Complex64::new(c * c - 4.0 * model.a * model.eta, 0.0).sqrt();
    -(Complex64::new(c, 0.0) - disc) / model.eta
}

/// Momentum maximising the descent rate, `max(1 − 2√(aη), 0)`.
pub fn mu_opt(model: &QuadraticModel) -> Result<f64> {
    if model.a <= 0.0 {
        return Err(Error::invalid("a", "no optimal momentum without positive curvature"));
    }
    Ok((1.0 - 2.0 * (model.a * model.eta).sqrt()).max(0.0))
}

/// Stationary moments `(ηΣ/(4(1−μ)), η²Σ/(2(1−μ)), 0)`.
pub fn momentum_steady_state(mu: f64, model: &QuadraticModel) -> Result<MomentStateM> {
    check_mu(mu)?;
    if mu >= 1.0 {
        return Err(Error::invalid("mu", "no steady state without damping"));
    }
    if model.a <= 0.0 {
        return Err(Error::invalid("a", "no steady state without positive curvature"));
    }
    let c = 1.0 - mu;
    Ok(MomentStateM {
        ef: model.eta_sigma() / (4.0 * c),
        ev2: model.eta * model.eta_sigma() / (2.0 * c),
        evg: 0.0,
    })
}

/// `ṁ = Re λ(μ_t) (m − m∞(μ_t))` under `μ(t, m)`, clamped to `[0, 1]`.
pub fn integrate_averaged<M>(
    model: &QuadraticModel,
    mu: M,
    m0: f64,
    horizon: f64,
    h: f64,
) -> Result<ControlledPath>
where
    M: Fn(f64, f64) -> f64,
{
    model.validate()?;
    if model.a <= 0.0 {
        return Err(Error::invalid("a", "averaged dynamics need positive curvature"));
    }
    let model = *model;
    integrate_scalar(
        |t, m| mu(t, m).clamp(0.0, 1.0),
        move |m, mu| {
            let ss = momentum_steady_state(mu, &model)?;
            Ok(dominant_eigenvalue_unchecked(mu, &model).re * (m - ss.ef))
        },
        m0,
        horizon,
        h,
    )
}

/// Feedback momentum `min(μ_opt, max(0, 1 − ηΣ/(4m)))` for `a > 0`, else 1.
pub fn optimal_mu_feedback(m: f64, model: &QuadraticModel) -> f64 {
    if model.a <= 0.0 {
        return 1.0;
    }
    let cap = (1.0 - 2.0 * (model.a * model.eta).sqrt()).max(0.0);
    if m <= 0.0 {
        return 0.0;
    }
    let es = model.eta_sigma();
    if es < TINY {
        return cap;
    }
    (1.0 - es / (4.0 * m)).max(0.0).min(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig_model() -> QuadraticModel {
        QuadraticModel::new(2.0, 0.0, 4.0, 5e-3).unwrap()
    }

    #[test]
    fn lr_moment_basics() {
        let m = fig_model();
        let p = integrate_lr_moment(&m, |_, _| 0.0, 0.7, 1.0, 1e-2).unwrap();
        assert!(p.m.iter().all(|v| *v == 0.7));
        let p = integrate_lr_moment(&m, |_, _| 1.0, 1.0, 10.0, 1e-3).unwrap();
        assert!((p.last() - 5e-3).abs() < 1e-12);
        // exact solution of the linear ODE at u = 1
        let t = 0.5;
        let i = p.times.iter().position(|s| (*s - t).abs() < 1e-9).unwrap();
        let exact = (-2.0 * 2.0 * t).exp() * (1.0 - 5e-3) + 5e-3;
        assert!((p.m[i] - exact).abs() < 1e-11);
        let neg = QuadraticModel::new(-1.0, 0.0, 4.0, 5e-3).unwrap();
        let p = integrate_lr_moment(&neg, |_, _| 1.0, -0.5, 3.0, 1e-3).unwrap();
        assert!(p.last() < -0.5 * (2.0 * 3.0f64).exp() * 0.9);
        assert!(p.m.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn u_feedback_values() {
        let m = fig_model();
        let es = m.eta_sigma();
        assert_eq!(optimal_u_feedback(3.0, &QuadraticModel { a: -1.0, ..m }), 1.0);
        assert!((optimal_u_feedback(es / 4.0, &m) - 0.5).abs() < 1e-15);
        assert_eq!(optimal_u_feedback(es, &m), 1.0);
        assert_eq!(optimal_u_feedback(-1.0, &m), 0.0);
        assert_eq!(optimal_u_feedback(0.3, &QuadraticModel { sigma: 0.0, ..m }), 1.0);
    }

    #[test]
    fn annealing_schedule() {
        let m = fig_model();
        let m0 = 1.0;
        assert_eq!(lr_annealing_schedule(0.0, &m, m0).unwrap(), 1.0);
        let ts = lr_transition_time(&m, m0).unwrap();
        assert!((lr_annealing_schedule(ts + 0.5, &m, m0).unwrap() - 0.5).abs() < 1e-15);
        // agrees with the SGD transition time on quadratic1d (x₀ = 1, m₀ = 1) to leading order
        let tq = transition_time_quadratic(m.eta, 1.0).unwrap();
        assert!((ts - tq).abs() / tq < 0.02, "{ts} vs {tq}");
        let r = lr_annealing_schedule(0.0, &m, m.eta_sigma() / 8.0);
        assert!(matches!(r, Err(Error::NoTransition { feedback, .. }) if (feedback - 0.25).abs() < 1e-15));
    }

    #[test]
    fn feedback_reproduces_closed_form_path() {
        let m = fig_model();
        let m0 = 1.0;
        let p = integrate_lr_moment(&m, |_, v| optimal_u_feedback(v, &m), m0, 5.0, 1e-3).unwrap();
        for (t, v) in p.times.iter().zip(&p.m).step_by(100) {
            let exact = lr_optimal_moment(*t, &m, m0).unwrap();
            assert!((v - exact).abs() < 1e-6 * exact.max(1e-3), "t={t}: {v} vs {exact}");
        }
        for (t, u) in p.times.iter().zip(&p.control).step_by(250) {
            let open = lr_annealing_schedule(*t, &m, m0).unwrap();
            assert!((u - open).abs() < 1e-3, "t={t}: {u} vs {open}");
        }
    }

    #[test]
    fn transition_time_values() {
        let t = transition_time_quadratic(5e-3, 1.0).unwrap();
        assert!((t - 1.3205).abs() < 1e-3);
        assert_eq!((t / 5e-3).round() as usize, 264);
        assert!(transition_time_quadratic(5e-3, 1e-9).unwrap() < 1e-12);
        for eta in [1e-6, 1e-8, 1e-10] {
            let t = transition_time_quadratic(eta, 1.0).unwrap();
            assert!((t / (0.25 * (1.0 / eta).ln()) - 1.0).abs() < 0.02);
        }
        assert!(transition_time_quadratic(0.0, 1.0).is_err());
    }

    #[test]
    fn momentum_matrix_and_eigenvalues() {
        let m = fig_model();
        let (a1, _) = momentum_system(1.0, &m).unwrap();
        assert_eq!((a1[(1, 1)], a1[(2, 2)]), (0.0, 0.0));
        // a = 1 gives the unit-curvature layout
        let (u, _) = momentum_system(0.5, &QuadraticModel { a: 1.0, ..m }).unwrap();
        assert_eq!(u.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 200.0]);
        assert_eq!(u.row(2).iter().copied().collect::<Vec<_>>(), vec![-2.0, 200.0, -100.0]);
        let (a8, b) = momentum_system(0.8, &m).unwrap();
        assert_eq!(b, Vector3::new(0.0, 0.02, 0.0));
        let max_re = a8
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((max_re + 40.0).abs() < 1e-3, "{max_re}");
        let lam = dominant_eigenvalue(0.8, &m).unwrap();
        // discriminant vanishes up to the rounding of 1 − 0.8
        assert!((lam.re + 40.0).abs() < 1e-6 && lam.im.abs() < 1e-5);
        assert!(dominant_eigenvalue(0.9, &m).unwrap().im.abs() > 0.0);
        let neg = QuadraticModel { a: -1.0, ..m };
        let (an, _) = momentum_system(0.5, &neg).unwrap();
        assert!(an.complex_eigenvalues().iter().any(|z| z.re > 0.0));
        assert!(momentum_system(1.2, &m).is_err());
    }

    #[test]
    fn small_eta_eigenvalue_limit() {
        let m = QuadraticModel::new(2.0, 0.0, 1.0, 1e-6).unwrap();
        for mu in [0.0, 0.3, 0.6, 0.9] {
            let lam = dominant_eigenvalue(mu, &m).unwrap();
            let approx = -2.0 * m.a / (1.0 - mu);
            assert!((lam.re / approx - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn mu_opt_values() {
        assert!((mu_opt(&fig_model()).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(mu_opt(&QuadraticModel::new(1.0, 0.0, 1.0, 0.3).unwrap()).unwrap(), 0.0);
        assert!(mu_opt(&QuadraticModel::new(1.0, 0.0, 1.0, 1e-12).unwrap()).unwrap() > 0.99999);
        assert!(mu_opt(&QuadraticModel { a: 0.0, ..fig_model() }).is_err());
    }

    #[test]
    fn steady_state_is_stationary() {
        let m = fig_model();
        let ss = momentum_steady_state(0.8, &m).unwrap();
        assert!((ss.ef - 0.025).abs() < 1e-15);
        for mu in [0.0, 0.5, 0.8, 0.95] {
            let (a, b) = momentum_system(mu, &m).unwrap();
            let r = a * momentum_steady_state(mu, &m).unwrap().to_vector() + b;
            assert!(r.amax() < 1e-12, "{r}");
        }
        let quiet = QuadraticModel { sigma: 0.0, ..m };
        assert_eq!(momentum_steady_state(0.5, &quiet).unwrap(), MomentStateM::default());
        assert!(momentum_steady_state(1.0, &m).is_err());
    }

    #[test]
    fn momentum_moments_converge() {
        let m = fig_model();
        let p = integrate_momentum_moments(&m, |_, _| 0.8, MomentStateM::at_rest(&m, 1.0), 2.0, 1e-4).unwrap();
        let last = p.states.last().unwrap();
        assert!((last.ef - 0.025).abs() < 1e-6);
        let quiet = QuadraticModel { sigma: 0.0, ..m };
        let p = integrate_momentum_moments(&quiet, |_, _| 0.0, MomentStateM::at_rest(&quiet, 1.0), 3.0, 1e-4).unwrap();
        // decay rate |Re λ(0)| = (1 − √(1 − 4aη))/η ≈ 4.04
        assert!(p.states.last().unwrap().ef < 2.0 * (-4.04f64 * 3.0).exp());
    }

    #[test]
    fn averaged_dynamics() {
        let m = fig_model();
        let ss = momentum_steady_state(0.5, &m).unwrap().ef;
        let p = integrate_averaged(&m, |_, _| 0.5, ss, 1.0, 1e-3).unwrap();
        assert!(p.m.iter().all(|v| (v - ss).abs() < 1e-15));
        // μ_opt gives the fastest short-horizon descent on a constant-μ grid
        let best = (0..=99)
            .map(|i| i as f64 / 100.0)
            .map(|mu| (mu, integrate_averaged(&m, |_, _| mu, 1.0, 0.02, 1e-4).unwrap().last()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!((best.0 - 0.8).abs() < 0.015, "{best:?}");
        let r = integrate_averaged(&m, |_, _| 1.0, 1.0, 1.0, 1e-3);
        assert!(r.is_err());
    }

    #[test]
    fn mu_feedback_values() {
        let m = fig_model();
        assert_eq!(optimal_mu_feedback(1.0, &QuadraticModel { a: -1.0, ..m }), 1.0);
        assert_eq!(optimal_mu_feedback(m.eta_sigma() / 4.0, &m), 0.0);
        assert!((optimal_mu_feedback(1e12, &m) - 0.8).abs() < 1e-9);
        assert_eq!(optimal_mu_feedback(-3.0, &m), 0.0);
    }

    #[test]
    fn eigenvalue_grid_minimum_at_mu_opt() {
        let m = fig_model();
        let (arg, _) = (0..1000)
            .map(|i| i as f64 / 1000.0)
            .map(|mu| (mu, dominant_eigenvalue(mu, &m).unwrap().re))
            .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assert!((arg - 0.8).abs() <= 1e-3);
    }

    fn model_strategy() -> impl Strategy<Value = QuadraticModel> {
        (-3.0f64..3.0, -2.0f64..2.0, 0.0f64..10.0, 1e-4f64..0.5)
            .prop_map(|(a, b, s, e)| QuadraticModel::new(a, b, s, e).unwrap())
    }

    proptest! {
        #[test]
        fn feedback_bounded_and_monotone(model in model_strategy(), m1 in 0.0f64..10.0, m2 in 0.0f64..10.0) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            for v in [lo, hi] {
                let u = optimal_u_feedback(v, &model);
                let mu = optimal_mu_feedback(v, &model);
                prop_assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&mu));
            }
            if model.a > 0.0 {
                prop_assert!(optimal_u_feedback(lo, &model) <= optimal_u_feedback(hi, &model));
                prop_assert!(optimal_mu_feedback(lo, &model) <= optimal_mu_feedback(hi, &model));
            }
        }
    }
}
