use super::{check_dims, check_rate, check_unit, Diagnostics, Optimizer};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub eta: f64,
}

impl Sgd {
    pub fn new(eta: f64) -> Result<Self> {
        check_rate(eta)?;
        Ok(Self { eta })
    }
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        check_dims(x.len(), x, g)?;
        for (xi, gi) in x.iter_mut().zip(g) {
            *xi -= self.eta * gi;
        }
        ensure_finite("iterate", x)
    }
}

/// Heavy-ball momentum `v ← μ v − η g`, `x ← x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Msgd {
    pub eta: f64,
    pub mu: f64,
    pub v: Vec<f64>,
}

impl Msgd {
    pub fn new(dim: usize, eta: f64, mu: f64) -> Result<Self> {
        check_rate(eta)?;
        check_unit("mu", mu)?;
        Ok(Self {
            eta,
            mu,
            v: vec![0.0; dim],
        })
    }
}

fn momentum_step(v: &mut [f64], x: &mut [f64], g: &[f64], mu: f64, eta: f64) -> Result<()> {
    check_dims(v.len(), x, g)?;
    for j in 0..x.len() {
        v[j] = mu * v[j] - eta * g[j];
        x[j] += v[j];
    }
    ensure_finite("iterate", x)
}

impl Optimizer for Msgd {
    fn name(&self) -> &'static str {
        "msgd"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        momentum_step(&mut self.v, x, g, self.mu, self.eta)
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            mean_mu: Some(self.mu),
            ..Diagnostics::default()
        }
    }
}

/// `μ_k = min(1 − 2^{−1−log₂(⌊k/250⌋+1)}, μ_max)`.
pub fn msgd_annealed_mu(k: usize, mu_max: f64) -> f64 {
    let m = (k / 250 + 1) as f64;
    // 2^{−1−log₂ m} = 1/(2m), exact for the integer m
    (1.0 - 0.5 / m).min(mu_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsgdAnnealed {
    pub eta: f64,
    pub mu_max: f64,
    pub v: Vec<f64>,
    pub k: usize,
}

impl MsgdAnnealed {
    pub fn new(dim: usize, eta: f64, mu_max: f64) -> Result<Self> {
        check_rate(eta)?;
        check_unit("mu_max", mu_max)?;
        Ok(Self {
            eta,
            mu_max,
            v: vec![0.0; dim],
            k: 0,
        })
    }
}

impl Optimizer for MsgdAnnealed {
    fn name(&self) -> &'static str {
        "msgd-a"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        let mu = msgd_annealed_mu(self.k, self.mu_max);
        momentum_step(&mut self.v, x, g, mu, self.eta)?;
        self.k += 1;
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            mean_mu: Some(msgd_annealed_mu(self.k, self.mu_max)),
            ..Diagnostics::default()
        }
    }
}

/// `G ← G + g²`, `x ← x − η g/√(G + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub eta: f64,
    pub eps: f64,
    pub acc: Vec<f64>,
}

impl Adagrad {
    pub fn new(dim: usize, eta: f64, eps: f64) -> Result<Self> {
        check_rate(eta)?;
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        Ok(Self {
            eta,
            eps,
            acc: vec![0.0; dim],
        })
    }
}

impl Optimizer for Adagrad {
    fn name(&self) -> &'static str {
        "adagrad"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        check_dims(self.acc.len(), x, g)?;
        for j in 0..x.len() {
            self.acc[j] += g[j] * g[j];
            x[j] -= self.eta * g[j] / (self.acc[j] + self.eps).sqrt();
        }
        ensure_finite("iterate", x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub k: i32,
}

impl Adam {
    pub fn new(dim: usize, eta: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        check_rate(eta)?;
        for (arg, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(arg, "must lie in [0, 1)"));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        Ok(Self {
            eta,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            k: 0,
        })
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        check_dims(self.m.len(), x, g)?;
        self.k = self.k.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.k);
        let c2 = 1.0 - self.beta2.powi(self.k);
        for j in 0..x.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g[j] * g[j];
            let m_hat = self.m[j] / c1;
            let v_hat = self.v[j] / c2;
            x[j] -= self.eta * m_hat / (v_hat.sqrt() + self.eps);
        }
        ensure_finite("iterate", x)
    }
}
