//! Discrete-time SGD, momentum SGD and learning-rate-adjusted SGD, plus
//! ensemble moment estimation and exact moment recursions for affine-gradient
//! objectives.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::objectives::{FiniteSumObjective, GradientStructure};
use crate::rng::{replica_rng, ReplicaRng};

/// Iterates with any coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Indices drawn i.i.d. uniformly, with replacement.
    #[default]
    WithReplacement,
    /// Indices drawn without replacement from a fresh permutation each epoch.
    EpochShuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Keep every `record_every`-th state (the final state is always kept).
    pub record_every: usize,
    /// Evaluate `f` at recorded states.
    pub record_loss: bool,
    pub sampling: Sampling,
}

impl SgdConfig {
    pub fn new(eta: f64, steps: usize, x0: Vec<f64>, seed: u64) -> Self {
        Self {
            eta,
            steps,
            batch_size: 1,
            x0,
            seed,
            record_every: 1,
            record_loss: false,
            sampling: Sampling::WithReplacement,
        }
    }

    pub fn with_batch(mut self, m: usize) -> Self {
        self.batch_size = m;
        self
    }
    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }
    pub fn with_loss(mut self) -> Self {
        self.record_loss = true;
        self
    }

    pub fn validate(&self, obj: &FiniteSumObjective) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "learning rate must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > obj.n() {
            return Err(Error::invalid(
                "batch_size",
                format!("must be in 1..={}", obj.n()),
            ));
        }
        if self.x0.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                expected: obj.dim(),
                got: self.x0.len(),
            });
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be >= 1"));
        }
        ensure_finite("x0", &self.x0)
    }
}

/// Recorded iterates of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    /// Time of each record: `k η` for SGD, `k δ` for SDE integration.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub velocities: Option<Vec<DVector<f64>>>,
    pub losses: Option<Vec<f64>>,
}

impl Trajectory {
    fn with_capacity(cap: usize, momentum: bool, loss: bool) -> Self {
        Self {
            steps: Vec::with_capacity(cap),
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            velocities: momentum.then(|| Vec::with_capacity(cap)),
            losses: loss.then(|| Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }
}

enum Update<'a> {
    Plain,
    Momentum(&'a (dyn Fn(usize) -> f64 + Sync)),
    LrAdjusted(&'a (dyn Fn(usize) -> f64 + Sync)),
}

struct BatchSampler {
    n: usize,
    sampling: Sampling,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize, sampling: Sampling) -> Self {
        Self {
            n,
            sampling,
            perm: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self, rng: &mut ReplicaRng) -> usize {
        match self.sampling {
            Sampling::WithReplacement => rng.random_range(0..self.n),
            Sampling::EpochShuffle => {
                if self.cursor == self.n {
                    self.perm.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.perm[self.cursor - 1]
            }
        }
    }
}

fn simulate(
    obj: &FiniteSumObjective,
    cfg: &SgdConfig,
    replica: usize,
    update: Update<'_>,
) -> Result<Trajectory> {
    cfg.validate(obj)?;
    let d = obj.dim();
    let loss = obj.loss();
    let mut rng = replica_rng(cfg.seed, replica as u64);
    let mut sampler = BatchSampler::new(obj.n(), cfg.sampling);
    let mut x = cfg.x0.clone();
    let mut v = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut gi = vec![0.0; d];
    let momentum = matches!(update, Update::Momentum(_));
    let mut traj = Trajectory::with_capacity(
        cfg.steps / cfg.record_every + 2,
        momentum,
        cfg.record_loss,
    );
    let record = |k: usize, x: &[f64], v: &[f64], traj: &mut Trajectory| {
        traj.steps.push(k);
        traj.times.push(k as f64 * cfg.eta);
        traj.states.push(DVector::from_column_slice(x));
        if let Some(vs) = traj.velocities.as_mut() {
            vs.push(DVector::from_column_slice(v));
        }
        if let Some(ls) = traj.losses.as_mut() {
            ls.push(loss.value(x));
        }
    };
    record(0, &x, &v, &mut traj);
    let eta = cfg.eta;
    let m = cfg.batch_size;
    for k in 0..cfg.steps {
        if m == 1 {
            loss.sample_grad(sampler.next(&mut rng), &x, &mut g);
        } else {
            g.iter_mut().for_each(|a| *a = 0.0);
            for _ in 0..m {
                loss.sample_grad(sampler.next(&mut rng), &x, &mut gi);
                for (a, b) in g.iter_mut().zip(&gi) {
                    *a += b;
                }
            }
            g.iter_mut().for_each(|a| *a /= m as f64);
        }
        match update {
            Update::Plain => {
                for j in 0..d {
                    x[j] -= eta * g[j];
                }
            }
            Update::LrAdjusted(u) => {
                let step = eta * u(k).clamp(0.0, 1.0);
                for j in 0..d {
                    x[j] -= step * g[j];
                }
            }
            Update::Momentum(mu) => {
                let mu = mu(k);
                for j in 0..d {
                    v[j] = mu * v[j] - eta * g[j];
                    x[j] += v[j];
                }
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
            record(k1, &x, &v, &mut traj);
        }
    }
    Ok(traj)
}

/// Plain SGD `x_{k+1} = x_k − η ḡ_k` on replica stream 0.
pub fn run_sgd(obj: &FiniteSumObjective, cfg: &SgdConfig) -> Result<Trajectory> {
    run_sgd_replica(obj, cfg, 0)
}

pub fn run_sgd_replica(obj: &FiniteSumObjective, cfg: &SgdConfig, replica: usize) -> Result<Trajectory> {
    simulate(obj, cfg, replica, Update::Plain)
}

/// Momentum SGD `v_{k+1} = μ_k v_k − η ḡ_k`, `x_{k+1} = x_k + v_{k+1}`, with `v₀ = 0`.
pub fn run_msgd(
    obj: &FiniteSumObjective,
    cfg: &SgdConfig,
    mu_schedule: &(dyn Fn(usize) -> f64 + Sync),
) -> Result<Trajectory> {
    run_msgd_replica(obj, cfg, mu_schedule, 0)
}

pub fn run_msgd_replica(
    obj: &FiniteSumObjective,
    cfg: &SgdConfig,
    mu_schedule: &(dyn Fn(usize) -> f64 + Sync),
    replica: usize,
) -> Result<Trajectory> {
    simulate(obj, cfg, replica, Update::Momentum(mu_schedule))
}

/// SGD with adjustment factor `x_{k+1} = x_k − η u_k ḡ_k`; `u_k` is clipped to `[0, 1]`.
pub fn run_lr_adjusted(
    obj: &FiniteSumObjective,
    cfg: &SgdConfig,
    u_schedule: &(dyn Fn(usize) -> f64 + Sync),
) -> Result<Trajectory> {
    run_lr_adjusted_replica(obj, cfg, u_schedule, 0)
}

pub fn run_lr_adjusted_replica(
    obj: &FiniteSumObjective,
    cfg: &SgdConfig,
    u_schedule: &(dyn Fn(usize) -> f64 + Sync),
    replica: usize,
) -> Result<Trajectory> {
    simulate(obj, cfg, replica, Update::LrAdjusted(u_schedule))
}

/// Per-record ensemble statistics over independent replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub replicas: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// Sample covariance (`1/(R−1)`); absent when `R = 1`.
    pub covariance: Option<Vec<DMatrix<f64>>>,
    pub loss_mean: Option<Vec<f64>>,
    pub loss_var: Option<Vec<f64>>,
}

impl EnsembleMoments {
    pub fn len(&self) -> usize {
        self.mean.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.mean.first().map_or(0, |m| m.len())
    }

    pub fn variance(&self, idx: usize, j: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[idx][(j, j)])
    }

    /// Standard error of the mean of coordinate `j` at record `idx`.
    pub fn mean_stderr(&self, idx: usize, j: usize) -> Option<f64> {
        self.variance(idx, j)
            .map(|v| (v.max(0.0) / self.replicas as f64).sqrt())
    }

    /// Standard error of the sample standard deviation under a Gaussian
    /// marginal: `s / √(2(R−1))`.
    pub fn std_stderr(&self, idx: usize, j: usize) -> Option<f64> {
        self.variance(idx, j)
            .map(|v| v.max(0.0).sqrt() / (2.0 * (self.replicas as f64 - 1.0)).sqrt())
    }

    pub fn loss_stderr(&self, idx: usize) -> Option<f64> {
        self.loss_var
            .as_ref()
            .map(|v| (v[idx].max(0.0) / self.replicas as f64).sqrt())
    }

    /// Index of the record at `step`, if it was recorded.
    pub fn index_of_step(&self, step: usize) -> Option<usize> {
        self.steps.binary_search(&step).ok()
    }
}

struct Accumulator {
    count: usize,
    mean: Vec<DVector<f64>>,
    m2: Vec<DMatrix<f64>>,
    loss_mean: Vec<f64>,
    loss_m2: Vec<f64>,
    steps: Vec<usize>,
    times: Vec<f64>,
    has_loss: bool,
}

impl Accumulator {
    fn new(first: &Trajectory) -> Self {
        let d = first.states[0].len();
        let len = first.len();
        Self {
            count: 0,
            mean: vec![DVector::zeros(d); len],
            m2: vec![DMatrix::zeros(d, d); len],
            loss_mean: vec![0.0; len],
            loss_m2: vec![0.0; len],
            steps: first.steps.clone(),
            times: first.times.clone(),
            has_loss: first.losses.is_some(),
        }
    }

    fn push(&mut self, t: &Trajectory) {
        assert_eq!(t.len(), self.mean.len(), "replicas must share record grid");
        self.count += 1;
        let c = self.count as f64;
        for (idx, x) in t.states.iter().enumerate() {
            let delta = x - &self.mean[idx];
            self.mean[idx] += &delta / c;
            let delta2 = x - &self.mean[idx];
            self.m2[idx] += &delta * delta2.transpose();
        }
        if let Some(ls) = &t.losses {
            for (idx, &l) in ls.iter().enumerate() {
                let delta = l - self.loss_mean[idx];
                self.loss_mean[idx] += delta / c;
                self.loss_m2[idx] += delta * (l - self.loss_mean[idx]);
            }
        }
    }

    fn finish(mut self) -> EnsembleMoments {
        let r = self.count;
        let covariance = (r >= 2).then(|| {
            self.m2
                .iter_mut()
                .map(|m| {
                    let mut c = &*m / (r as f64 - 1.0);
                    crate::linalg::symmetrize(&mut c);
                    c
                })
                .collect()
        });
        let (loss_mean, loss_var) = if self.has_loss {
            let var = (r >= 2).then(|| {
                self.loss_m2
                    .iter()
                    .map(|m| m / (r as f64 - 1.0))
                    .collect()
            });
            (Some(self.loss_mean), var)
        } else {
            (None, None)
        };
        EnsembleMoments {
            replicas: r,
            steps: self.steps,
            times: self.times,
            mean: self.mean,
            covariance,
            loss_mean,
            loss_var,
        }
    }
}

const ENSEMBLE_CHUNK: usize = 64;

/// Run `replicas` independent replicas and accumulate per-record moments.
///
/// Replicas execute on the current rayon pool; results are folded in replica
/// order so the output does not depend on scheduling. A diverged replica
/// aborts the ensemble with its index attached.
pub fn ensemble_moments<F>(replicas: usize, run: F) -> Result<EnsembleMoments>
where
    F: Fn(usize) -> Result<Trajectory> + Sync,
{
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be >= 1"));
    }
    let mut acc: Option<Accumulator> = None;
    let mut start = 0;
    while start < replicas {
        let end = (start + ENSEMBLE_CHUNK).min(replicas);
        let batch: Vec<Result<Trajectory>> = (start..end)
            .into_par_iter()
            .map(|r| run(r).map_err(|e| e.with_replica(r)))
            .collect();
        for t in batch {
            let t = t?;
            acc.get_or_insert_with(|| Accumulator::new(&t)).push(&t);
        }
        start = end;
    }
    Ok(acc.expect("at least one replica").finish())
}

/// Raw moments `E x^p`, `p = 0..=max_degree`, of one coordinate.
pub type RawMoments = Vec<f64>;

fn binomial_table(p: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; p + 1]; p + 1];
    for n in 0..=p {
        c[n][0] = 1.0;
        for k in 1..=n {
            c[n][k] = c[n - 1][k - 1] + if k < n { c[n - 1][k] } else { 0.0 };
        }
    }
    c
}

/// Raw moments of the mean of `m` i.i.d. draws from the uniform distribution on `values`.
pub(crate) fn batch_mean_moments(values: &[f64], m: usize, max_degree: usize) -> Vec<f64> {
    let binom = binomial_table(max_degree);
    let single: Vec<f64> = (0..=max_degree)
        .map(|p| values.iter().map(|v| v.powi(p as i32)).sum::<f64>() / values.len() as f64)
        .collect();
    let mut sum = single.clone();
    for _ in 1..m {
        sum = (0..=max_degree)
            .map(|p| (0..=p).map(|q| binom[p][q] * sum[q] * single[p - q]).sum())
            .collect();
    }
    (0..=max_degree)
        .map(|p| sum[p] / (m as f64).powi(p as i32))
        .collect()
}

/// Exact raw moments of each coordinate of the SGD iterate `x_k`.
///
/// Requires per-dimension affine sample gradients with a common slope, so that
/// `x_{k+1} = (1 − η a) x_k + ξ_k` with `ξ_k` independent of `x_k`. Objectives
/// with only an affine full gradient are accepted for `max_degree ≤ 1`.
pub fn exact_quadratic_moments(
    obj: &FiniteSumObjective,
    eta: f64,
    batch_size: usize,
    x0: &[f64],
    k: usize,
    max_degree: usize,
) -> Result<Vec<RawMoments>> {
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    if batch_size == 0 || batch_size > obj.n() {
        return Err(Error::invalid("batch_size", format!("must be in 1..={}", obj.n())));
    }
    ensure_finite("x0", x0)?;
    let binom = binomial_table(max_degree);
    let per_dim_noise: Vec<(f64, Vec<f64>)> = match obj.structure() {
        GradientStructure::AffineSamples(a) => (0..obj.dim())
            .map(|j| {
                let scaled: Vec<f64> = a.intercepts_of(j).iter().map(|c| -eta * c).collect();
                (a.slope[j], batch_mean_moments(&scaled, batch_size, max_degree))
            })
            .collect(),
        GradientStructure::AffineMean { slope, intercept } if max_degree <= 1 => (0..obj.dim())
            .map(|j| {
                let mut m = vec![1.0];
                if max_degree == 1 {
                    m.push(-eta * intercept[j]);
                }
                (slope[j], m)
            })
            .collect(),
        _ => {
            return Err(Error::Unsupported(format!(
                "exact moments of degree {max_degree} need affine sample gradients; `{}` has none",
                obj.name()
            )))
        }
    };
    Ok(per_dim_noise
        .into_iter()
        .zip(x0)
        .map(|((slope, noise), &start)| {
            let c = 1.0 - eta * slope;
            let cpow: Vec<f64> = (0..=max_degree).map(|q| c.powi(q as i32)).collect();
            let mut mom: Vec<f64> = (0..=max_degree).map(|p| start.powi(p as i32)).collect();
            for _ in 0..k {
                mom = (0..=max_degree)
                    .map(|p| {
                        (0..=p)
                            .map(|q| binom[p][q] * cpow[q] * mom[q] * noise[p - q])
                            .sum()
                    })
                    .collect();
            }
            mom
        })
        .collect())
}
