use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Optimizer;
use crate::error::{Error, Result};
use crate::objectives::FiniteSumObjective;
use crate::rng::replica_rng;
use crate::sgd_sim::DIVERGENCE_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Full-batch loss is evaluated every `log_every` steps (and at the end).
    pub log_every: usize,
    /// A run counts as diverged once the loss exceeds this multiple of
    /// `max(1, initial loss)`.
    pub blowup_factor: f64,
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            seed,
            log_every: 1,
            blowup_factor: 1e3,
        }
    }

    pub fn with_log_every(mut self, k: usize) -> Self {
        self.log_every = k;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_u: Option<f64>,
    pub mean_mu: Option<f64>,
    pub mean_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub optimizer: String,
    pub records: Vec<TrainRecord>,
    /// First step at which the run was declared diverged.
    pub diverged_at: Option<usize>,
    pub x: Vec<f64>,
}

impl TrainLog {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn initial_loss(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.loss)
    }

    /// Trapezoidal area under the logged loss curve, in steps.
    pub fn loss_auc(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| 0.5 * (w[0].loss + w[1].loss) * (w[1].step - w[0].step) as f64)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("step,loss,mean_u,mean_mu,mean_beta\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                r.loss,
                opt(r.mean_u),
                opt(r.mean_mu),
                opt(r.mean_beta)
            ));
        }
        s
    }
}

/// Mini-batch training (indices drawn with replacement) from `x0`.
///
/// Divergence is reported in the log rather than as an error.
pub fn train(
    obj: &FiniteSumObjective,
    opt: &mut dyn Optimizer,
    x0: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::invalid("batch_size", "batch size and log cadence must be >= 1"));
    }
    let loss = obj.loss();
    let n = obj.n();
    let d = obj.dim();
    let mut rng = replica_rng(cfg.seed, 0);
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut gi = vec![0.0; d];
    let record = |step: usize, x: &[f64], opt: &dyn Optimizer| {
        let diag = opt.diagnostics();
        TrainRecord {
            step,
            loss: loss.value(x),
            mean_u: diag.mean_u,
            mean_mu: diag.mean_mu,
            mean_beta: diag.mean_beta,
        }
    };
    let first = record(0, &x, opt);
    let limit = cfg.blowup_factor * first.loss.abs().max(1.0);
    let mut log = TrainLog {
        optimizer: opt.name().to_string(),
        records: vec![first],
        diverged_at: None,
        x: Vec::new(),
    };
    let blown = |r: &TrainRecord| !(r.loss.abs() <= limit);
    for k in 1..=cfg.steps {
        g.fill(0.0);
        for _ in 0..cfg.batch_size {
            loss.sample_grad(rng.random_range(0..n), &x, &mut gi);
            for (a, b) in g.iter_mut().zip(&gi) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        let stepped = opt.step(&mut x, &g);
        let escaped = x.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD));
        if stepped.is_err() || escaped {
            log.diverged_at = Some(k);
            break;
        }
        if k % cfg.log_every == 0 || k == cfg.steps {
            let r = record(k, &x, opt);
            let bad = blown(&r);
            log.records.push(r);
            if bad {
                log.diverged_at = Some(k);
                break;
            }
        }
    }
    log.x = x;
    Ok(log)
}
