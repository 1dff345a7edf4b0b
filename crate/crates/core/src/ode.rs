//! Fixed-step classical Runge–Kutta integration.

use crate::error::{Error, Result};

/// Densely sampled ODE solution on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdePath {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("path always holds the initial state")
    }

    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Linear interpolation of the state at time `t` (clamped to the grid).
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            out.copy_from_slice(&self.states[0]);
            return;
        }
        let h = self.step();
        let pos = (t - self.times[0]) / h;
        let i = (pos.floor() as usize).min(n - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        let (a, b) = (&self.states[i], &self.states[i + 1]);
        for k in 0..out.len() {
            out[k] = (1.0 - w) * a[k] + w * b[k];
        }
    }
}

/// Number of uniform steps covering `[0, horizon]` with spacing at most `h`.
pub fn grid_steps(horizon: f64, h: f64) -> usize {
    ((horizon / h) - 1e-9).ceil().max(0.0) as usize
}

/// Workspace for one RK4 step of an `n`-dimensional system.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advance `y` from `t` to `t + h` in place.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Integrate `y' = f(t, y)` on `[0, horizon]` with RK4, spacing `horizon / ceil(horizon / h)`.
///
/// Aborts with [`Error::Diverged`] on the first non-finite state.
pub fn rk4_integrate<F>(mut f: F, y0: &[f64], horizon: f64, h: f64) -> Result<OdePath>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("h", "step must be positive and finite"));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon", "must be non-negative and finite"));
    }
    let steps = grid_steps(horizon, h);
    let h_eff = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let mut rk = Rk4::new(y0.len());
    let mut y = y0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(y.clone());
    for k in 0..steps {
        let t = k as f64 * h_eff;
        rk.step(&mut f, t, &mut y, h_eff);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: k + 1,
                replica: None,
            });
        }
        times.push((k + 1) as f64 * h_eff);
        states.push(y.clone());
    }
    Ok(OdePath { times, states })
}
