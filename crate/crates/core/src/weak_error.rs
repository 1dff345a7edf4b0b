//! Weak approximation error between SGD iterates and their SMEs, and empirical
//! convergence orders.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{gradient_covariance, FiniteSumObjective, GradientStructure, WeakFamily};
use crate::sgd_sim::{exact_quadratic_moments, run_sgd_replica, RawMoments, SgdConfig};
use crate::sme::{build_sme_order1, build_sme_order2, euler_maruyama_replica, IntegratorConfig};

pub const MAX_DEGREE: usize = 6;

/// Default learning-rate grid, strictly decreasing.
pub const DEFAULT_ETA_GRID: [f64; 5] = [0.05, 0.02, 0.01, 0.005, 0.002];

/// Scalar polynomial `g(x) = Σ c_p x^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    coeffs: Vec<f64>,
}

impl TestFunction {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("test function coefficients"));
        }
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::invalid(
                "coeffs",
                format!("degree {} exceeds {MAX_DEGREE}", coeffs.len() - 1),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// `Σ c_p m_p` for raw moments `m_p = E X^p`.
    pub fn expect_from_moments(&self, moments: &[f64]) -> f64 {
        self.coeffs.iter().zip(moments).map(|(c, m)| c * m).sum()
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[0] += c;
        Self { coeffs }
    }
}

/// Raw moments `E X^p`, `p = 0..=degree`, of `N(mean, variance)`.
pub fn gaussian_raw_moments(mean: f64, variance: f64, degree: usize) -> Result<RawMoments> {
    if degree > MAX_DEGREE {
        return Err(Error::invalid("degree", format!("at most {MAX_DEGREE}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::invalid("variance", "must be non-negative"));
    }
    // E X^p = Σ_{k even} C(p,k) m^{p−k} σ^k (k−1)!!
    Ok((0..=degree)
        .map(|p| {
            let mut sum = 0.0;
            let mut binom = 1.0;
            let mut dfact = 1.0;
            for k in 0..=p {
                if k > 0 {
                    binom *= (p - k + 1) as f64 / k as f64;
                }
                if k % 2 == 0 {
                    if k >= 2 {
                        dfact *= (k - 1) as f64;
                    }
                    sum += binom * mean.powi((p - k) as i32) * variance.powi((k / 2) as i32) * dfact;
                }
            }
            sum
        })
        .collect())
}

pub fn gaussian_polynomial_expectation(mean: f64, variance: f64, coeffs: &[f64]) -> Result<f64> {
    let g = TestFunction::new(coeffs.to_vec())?;
    Ok(g.expect_from_moments(&gaussian_raw_moments(mean, variance, g.degree())?))
}

/// Exact raw moments of the SGD iterate `x_N` for a weak-error family started at `x0`.
pub fn discrete_moment_oracle(
    family: WeakFamily,
    eta: f64,
    steps: usize,
    max_degree: usize,
    x0: f64,
) -> Result<RawMoments> {
    let (obj, _) = crate::objectives::make_weak_error_family(family);
    if family == WeakFamily::Nonconvex && max_degree > 1 {
        return Err(Error::Unsupported(format!(
            "{} moment recursion closes only for degree <= 1",
            family.name()
        )));
    }
    let mut m = exact_quadratic_moments(&obj, eta, 1, &[x0], steps, max_degree)?;
    Ok(m.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmeOrder {
    First,
    Second,
}

impl SmeOrder {
    pub fn as_int(self) -> u8 {
        match self {
            SmeOrder::First => 1,
            SmeOrder::Second => 2,
        }
    }

    pub fn from_int(k: u8) -> Result<Self> {
        match k {
            1 => Ok(SmeOrder::First),
            2 => Ok(SmeOrder::Second),
            _ => Err(Error::invalid("order", "SME order must be 1 or 2")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimator {
    Exact,
    MonteCarlo {
        replicas: usize,
        seed: u64,
        /// Euler–Maruyama steps per SGD step when the SME has no closed form.
        substeps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorSetup {
    pub x0: f64,
    pub horizon: f64,
    pub batch_size: usize,
}

impl Default for WeakErrorSetup {
    fn default() -> Self {
        Self {
            x0: 1.0,
            horizon: 1.0,
            batch_size: 1,
        }
    }
}

/// Number of SGD steps `N = ⌊T/η⌋`.
pub fn steps_for(horizon: f64, eta: f64) -> usize {
    (horizon / eta + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorPoint {
    pub eta: f64,
    pub order: u8,
    pub steps: usize,
    pub sgd_expectation: f64,
    pub sme_expectation: f64,
    pub error: f64,
    /// Monte Carlo standard error of `error`; zero for the exact estimator.
    pub stderr: f64,
}

/// Linear drift `−θ(x − ξ)` and constant noise variance `ηΣ/m` of the SME, when they exist.
struct LinearSme {
    theta: f64,
    xi: f64,
    /// `None` when the diffusion depends on the state.
    noise_var: Option<f64>,
}

fn linear_sme(obj: &FiniteSumObjective, eta: f64, batch: usize, order: SmeOrder) -> Option<LinearSme> {
    let (slope, intercept, constant_noise) = match obj.structure() {
        GradientStructure::AffineSamples(a) => {
            let c = a.intercepts_of(0);
            (a.slope[0], c.iter().sum::<f64>() / c.len() as f64, true)
        }
        GradientStructure::AffineMean { slope, intercept } => (slope[0], intercept[0], false),
        GradientStructure::General => return None,
    };
    if slope <= 0.0 {
        return None;
    }
    let theta = match order {
        SmeOrder::First => slope,
        SmeOrder::Second => slope * (1.0 + 0.5 * eta * slope),
    };
    let noise_var = if constant_noise {
        let s = gradient_covariance(obj, &[0.0]).ok()?.sigma[(0, 0)];
        Some(eta * s / batch as f64)
    } else {
        None
    };
    Some(LinearSme {
        theta,
        xi: -intercept / slope,
        noise_var,
    })
}

fn sme_exact_expectation(
    obj: &FiniteSumObjective,
    g: &TestFunction,
    eta: f64,
    setup: &WeakErrorSetup,
    order: SmeOrder,
    t: f64,
) -> Result<Option<f64>> {
    let Some(lin) = linear_sme(obj, eta, setup.batch_size, order) else {
        return Ok(None);
    };
    let decay = (-lin.theta * t).exp();
    let mean = setup.x0 * decay + lin.xi * (1.0 - decay);
    match lin.noise_var {
        Some(v) => {
            let var = v / (2.0 * lin.theta) * -(-2.0 * lin.theta * t).exp_m1();
            Ok(Some(g.expect_from_moments(&gaussian_raw_moments(mean, var, g.degree())?)))
        }
        // only the mean closes for state-dependent noise
        None if g.degree() <= 1 => Ok(Some(g.expect_from_moments(&[1.0, mean]))),
        None => Ok(None),
    }
}

fn check_setup(obj: &FiniteSumObjective, eta: f64, setup: &WeakErrorSetup) -> Result<usize> {
    if obj.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "weak error uses scalar test functions; `{}` has dimension {}",
            obj.name(),
            obj.dim()
        )));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", "learning rate must be positive"));
    }
    if !(setup.horizon > 0.0) || !setup.horizon.is_finite() {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let n = steps_for(setup.horizon, eta);
    if n == 0 {
        return Err(Error::invalid("eta", "larger than the horizon"));
    }
    Ok(n)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `E_w = |E g(X_{Nη}) − E g(x_N)|` for the SME of the given order.
pub fn weak_error(
    obj: &FiniteSumObjective,
    g: &TestFunction,
    eta: f64,
    setup: &WeakErrorSetup,
    order: SmeOrder,
    estimator: Estimator,
) -> Result<WeakErrorPoint> {
    let n = check_setup(obj, eta, setup)?;
    let t = n as f64 * eta;
    let (sgd, sgd_se, sme, sme_se) = match estimator {
        Estimator::Exact => {
            let mom = exact_quadratic_moments(obj, eta, setup.batch_size, &[setup.x0], n, g.degree())?;
            let sgd = g.expect_from_moments(&mom[0]);
            let sme = sme_exact_expectation(obj, g, eta, setup, order, t)?.ok_or_else(|| {
                Error::Unsupported(format!(
                    "no closed-form SME moments of degree {} for `{}`",
                    g.degree(),
                    obj.name()
                ))
            })?;
            (sgd, 0.0, sme, 0.0)
        }
        Estimator::MonteCarlo {
            replicas,
            seed,
            substeps,
        } => {
            if replicas < 2 || substeps == 0 {
                return Err(Error::invalid("replicas", "need >= 2 replicas and >= 1 substep"));
            }
            let cfg = SgdConfig::new(eta, n, vec![setup.x0], seed)
                .with_batch(setup.batch_size)
                .with_record_every(n);
            let vals = (0..replicas)
                .into_par_iter()
                .map(|r| run_sgd_replica(obj, &cfg, r).map(|tr| g.eval(tr.last_state()[0])))
                .collect::<Result<Vec<f64>>>()?;
            let (sgd, sgd_se) = mean_and_stderr(&vals);
            let (sme, sme_se) = match sme_exact_expectation(obj, g, eta, setup, order, t)? {
                Some(v) => (v, 0.0),
                None => {
                    let mut sys = match order {
                        SmeOrder::First => build_sme_order1(obj, eta)?,
                        SmeOrder::Second => build_sme_order2(obj, eta)?,
                    };
                    if setup.batch_size > 1 {
                        return Err(Error::Unsupported(
                            "Euler–Maruyama SME with mini-batches".into(),
                        ));
                    }
                    sys.label.push_str("[weak]");
                    let em_steps = n * substeps;
                    let icfg = IntegratorConfig::new(t / em_steps as f64, em_steps, vec![setup.x0], seed ^ 0x5eed)
                        .with_record_every(em_steps);
                    let vals = (0..replicas)
                        .into_par_iter()
                        .map(|r| euler_maruyama_replica(&sys, &icfg, r).map(|tr| g.eval(tr.last_state()[0])))
                        .collect::<Result<Vec<f64>>>()?;
                    mean_and_stderr(&vals)
                }
            };
            (sgd, sgd_se, sme, sme_se)
        }
    };
    Ok(WeakErrorPoint {
        eta,
        order: order.as_int(),
        steps: n,
        sgd_expectation: sgd,
        sme_expectation: sme,
        error: (sme - sgd).abs(),
        stderr: (sgd_se * sgd_se + sme_se * sme_se).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares slope of `log E_w` against `log η`, with its standard error.
pub fn convergence_order(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(eta, e)| {
            let ok = eta > 0.0 && e > 0.0 && e.is_finite();
            if !ok {
                warn!("dropping weak-error point eta={eta}, E_w={e}");
            }
            ok
        })
        .map(|(eta, e)| (eta.ln(), e.ln()))
        .collect();
    if kept.len() < 3 {
        return Err(Error::invalid(
            "points",
            format!("need at least 3 positive points, got {}", kept.len()),
        ));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("points", "learning rates must differ"));
    }
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = kept
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = if kept.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        points: kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: u8,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorReport {
    pub objective: String,
    pub test_function: Vec<f64>,
    pub setup: WeakErrorSetup,
    pub estimator: Estimator,
    pub etas: Vec<f64>,
    pub points: Vec<WeakErrorPoint>,
    pub fits: Vec<OrderSummary>,
}

impl WeakErrorReport {
    pub fn fit(&self, order: SmeOrder) -> Option<&SlopeFit> {
        self.fits
            .iter()
            .find(|f| f.order == order.as_int())
            .map(|f| &f.fit)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eta,order,steps,sgd,sme,weak_error,stderr\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.eta, p.order, p.steps, p.sgd_expectation, p.sme_expectation, p.error, p.stderr
            );
        }
        s
    }
}

/// Weak errors of both SME orders over a strictly decreasing `etas` grid, with fitted slopes.
pub fn weak_error_sweep(
    obj: &FiniteSumObjective,
    g: &TestFunction,
    etas: &[f64],
    setup: &WeakErrorSetup,
    orders: &[SmeOrder],
    estimator: Estimator,
) -> Result<WeakErrorReport> {
    if etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("etas", "grid must be strictly decreasing"));
    }
    let mut points = Vec::with_capacity(etas.len() * orders.len());
    let mut fits = Vec::with_capacity(orders.len());
    for &order in orders {
        let row = etas
            .iter()
            .map(|&eta| weak_error(obj, g, eta, setup, order, estimator))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(f64, f64)> = row.iter().map(|p| (p.eta, p.error)).collect();
        if let Ok(fit) = convergence_order(&pairs) {
            fits.push(OrderSummary {
                order: order.as_int(),
                fit,
            });
        }
        points.extend(row);
    }
    Ok(WeakErrorReport {
        objective: obj.name().to_string(),
        test_function: g.coeffs().to_vec(),
        setup: setup.clone(),
        estimator,
        etas: etas.to_vec(),
        points,
        fits,
    })
}
