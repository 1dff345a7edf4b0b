//! `simulate`, `train` and `sweep`.

use anyhow::{bail, Context, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use smelab_core::adaptive_optim::{train, OptimizerConfig, TrainConfig, TrainLog};
use smelab_core::io::{moments_csv, trajectory_csv};
use smelab_core::rng::{derive_seed, replica_rng};
use smelab_core::sgd_sim::{
    ensemble_moments, run_msgd_replica, run_sgd_replica, SgdConfig,
};
use smelab_core::sme::{
    build_sme_momentum, build_sme_order1, build_sme_order2, constant_schedule, euler_maruyama_replica,
    IntegratorConfig,
};
use smelab_core::{DVector, FiniteSumObjective, Trajectory};

use crate::config::{EtaGrid, ExperimentConfig, Method, SimulateSpec, SweepSpec, TrainSpec};
use crate::manifest::{Artifacts, Status};

pub fn simulate(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Status> {
    let spec = cfg.section("simulate", &cfg.simulate)?;
    let obj = cfg.objective.build()?;
    let x0 = spec.x0.clone().unwrap_or_else(|| cfg.objective.default_x0(&obj, cfg.seed));
    let run = replica_runner(&obj, spec, x0, cfg.seed)?;
    if cfg.replicas == 1 {
        out.write("trajectory.csv", &trajectory_csv(&run(0)?))?;
    } else {
        let ens = ensemble_moments(cfg.replicas, &run)?;
        out.write("moments.csv", &moments_csv(&ens))?;
    }
    Ok(Status::Completed)
}

type Runner<'a> = Box<dyn Fn(usize) -> smelab_core::Result<Trajectory> + Sync + 'a>;

fn replica_runner<'a>(obj: &'a FiniteSumObjective, spec: &SimulateSpec, x0: Vec<f64>, seed: u64) -> Result<Runner<'a>> {
    let (steps, horizon) = spec.resolve_horizon()?;
    if spec.substeps == 0 {
        bail!("simulate.substeps: must be positive");
    }
    let mu = || spec.mu.context("simulate.mu: required for momentum methods");
    match spec.method {
        Method::Sgd | Method::Msgd => {
            let mut sgd = SgdConfig::new(spec.eta, steps, x0, seed)
                .with_batch(spec.batch_size)
                .with_record_every(spec.record_every);
            sgd.sampling = spec.sampling;
            if spec.loss {
                sgd = sgd.with_loss();
            }
            sgd.validate(obj)?;
            if spec.method == Method::Sgd {
                Ok(Box::new(move |r| run_sgd_replica(obj, &sgd, r)))
            } else {
                let mu = mu()?;
                Ok(Box::new(move |r| run_msgd_replica(obj, &sgd, &move |_| mu, r)))
            }
        }
        Method::Sme1 | Method::Sme2 | Method::SmeMomentum => {
            let d = obj.dim();
            let momentum = spec.method == Method::SmeMomentum;
            let system = match spec.method {
                Method::Sme1 => build_sme_order1(obj, spec.eta)?,
                Method::Sme2 => build_sme_order2(obj, spec.eta)?,
                _ => build_sme_momentum(obj, spec.eta, constant_schedule(mu()?))?,
            };
            let dt = spec.eta / spec.substeps as f64;
            let n = (horizon / dt).round() as usize;
            let start = if momentum {
                // zero initial velocity
                [vec![0.0; d], x0].concat()
            } else {
                x0
            };
            let em = IntegratorConfig::new(dt, n, start, seed).with_record_every(spec.record_every * spec.substeps);
            let loss = spec.loss;
            Ok(Box::new(move |r| {
                let mut t = euler_maruyama_replica(&system, &em, r)?;
                if momentum {
                    let (v, x): (Vec<_>, Vec<_>) = t
                        .states
                        .iter()
                        .map(|s| (DVector::from_column_slice(&s.as_slice()[..d]), DVector::from_column_slice(&s.as_slice()[d..])))
                        .unzip();
                    t.states = x;
                    t.velocities = Some(v);
                }
                if loss {
                    t.losses = Some(t.states.iter().map(|x| obj.value(x.as_slice())).collect::<smelab_core::Result<_>>()?);
                }
                Ok(t)
            }))
        }
    }
}

/// Seed of training run `index` under `master`; `train` uses index 0.
pub fn point_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

fn run_training(
    obj: &FiniteSumObjective,
    opt: &OptimizerConfig,
    x0: &[f64],
    steps: usize,
    batch: usize,
    log_every: usize,
    seed: u64,
) -> Result<TrainLog> {
    let mut o = opt.build(obj.dim())?;
    let cfg = TrainConfig::new(steps, batch, seed).with_log_every(log_every);
    Ok(train(obj, o.as_mut(), x0, &cfg)?)
}

fn train_x0(cfg: &ExperimentConfig, obj: &FiniteSumObjective, x0: &Option<Vec<f64>>) -> Vec<f64> {
    x0.clone().unwrap_or_else(|| cfg.objective.default_x0(obj, cfg.seed))
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Status> {
    let TrainSpec {
        optimizer,
        steps,
        batch_size,
        log_every,
        x0,
    } = cfg.section("train", &cfg.train)?;
    let obj = cfg.objective.build()?;
    let x0 = train_x0(cfg, &obj, x0);
    let log = run_training(&obj, optimizer, &x0, *steps, *batch_size, *log_every, point_seed(cfg.seed, 0))?;
    out.write("train.csv", &log.to_csv())?;
    out.write_json("summary.json", &TrainSummary::of(&log))?;
    Ok(if log.diverged() { Status::Diverged } else { Status::Completed })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    optimizer: String,
    initial_loss: f64,
    final_loss: f64,
    loss_auc: f64,
    diverged_at: Option<usize>,
}

impl TrainSummary {
    fn of(log: &TrainLog) -> Self {
        Self {
            optimizer: log.optimizer.clone(),
            initial_loss: log.initial_loss(),
            final_loss: log.final_loss(),
            loss_auc: log.loss_auc(),
            diverged_at: log.diverged_at,
        }
    }
}

pub fn resolve_grid(grid: &EtaGrid, seed: u64) -> Vec<f64> {
    match grid {
        EtaGrid::Values(v) => v.clone(),
        EtaGrid::LogUniform { low, high, samples } => {
            // one draw shared by all optimizers so curves are comparable point-for-point
            let mut rng = replica_rng(seed, u64::MAX);
            let (lo, hi) = (low.ln(), high.ln());
            (0..*samples)
                .map(|_| if hi > lo { rng.random_range(lo..hi).exp() } else { *low })
                .collect()
        }
    }
}

struct PointResult {
    optimizer: String,
    index: usize,
    eta: f64,
    seed: u64,
    outcome: std::result::Result<TrainLog, String>,
}

impl PointResult {
    fn status(&self) -> &str {
        match &self.outcome {
            Ok(l) if l.diverged() => "diverged",
            Ok(_) => "ok",
            Err(_) => "error",
        }
    }

    /// Ranking key: completed runs by final loss, then diverged runs, then failures.
    fn rank_key(&self) -> (u8, f64) {
        match &self.outcome {
            Ok(l) if !l.diverged() && l.final_loss().is_finite() => (0, l.final_loss()),
            Ok(_) => (1, 0.0),
            Err(_) => (2, 0.0),
        }
    }
}

pub fn sweep(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Status> {
    let spec: &SweepSpec = cfg.section("sweep", &cfg.sweep)?;
    let obj = cfg.objective.build()?;
    let x0 = train_x0(cfg, &obj, &spec.x0);
    let etas = resolve_grid(&spec.eta, cfg.seed);
    let jobs: Vec<(OptimizerConfig, usize, f64)> = spec
        .optimizers
        .iter()
        .flat_map(|o| etas.iter().enumerate().map(move |(i, &eta)| (o.clone(), i, eta)))
        .collect();
    let results: Vec<PointResult> = jobs
        .into_par_iter()
        .map(|(mut opt, index, eta)| {
            opt.eta = eta;
            let seed = point_seed(cfg.seed, index);
            let outcome = run_training(&obj, &opt, &x0, spec.steps, spec.batch_size, spec.log_every, seed)
                .map_err(|e| format!("{e:#}"));
            PointResult {
                optimizer: opt.name,
                index,
                eta,
                seed,
                outcome,
            }
        })
        .collect();

    let mut points = String::from("optimizer,index,eta,seed,status,final_loss,loss_auc,diverged_at,error\n");
    for p in &results {
        let (fin, auc, div, err) = match &p.outcome {
            Ok(l) => (
                l.final_loss().to_string(),
                l.loss_auc().to_string(),
                l.diverged_at.map_or(String::new(), |k| k.to_string()),
                String::new(),
            ),
            Err(e) => (String::new(), String::new(), String::new(), csv_quote(e)),
        };
        points.push_str(&format!("{},{},{},{},{},{fin},{auc},{div},{err}\n", p.optimizer, p.index, p.eta, p.seed, p.status()));
    }
    out.write("sweep_points.csv", &points)?;

    let mut summary = String::from("optimizer,rank,index,eta,status,final_loss,loss_auc\n");
    let mut curves = String::from("optimizer,rank,step,loss\n");
    let mut any_ok = false;
    for name in spec.optimizers.iter().map(|o| o.name.as_str()) {
        let mut group: Vec<&PointResult> = results.iter().filter(|p| p.optimizer == name).collect();
        group.sort_by(|a, b| {
            let (ka, kb) = (a.rank_key(), b.rank_key());
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.index.cmp(&b.index))
        });
        any_ok |= group.iter().any(|p| p.status() == "ok");
        let picks = [("best", 0), ("median", (group.len() - 1) / 2), ("worst", group.len() - 1)];
        for (rank, i) in picks {
            let p = group[i];
            let (fin, auc) = match &p.outcome {
                Ok(l) => {
                    for r in &l.records {
                        curves.push_str(&format!("{name},{rank},{},{}\n", r.step, r.loss));
                    }
                    (l.final_loss().to_string(), l.loss_auc().to_string())
                }
                Err(_) => (String::new(), String::new()),
            };
            summary.push_str(&format!("{name},{rank},{},{},{},{fin},{auc}\n", p.index, p.eta, p.status()));
        }
    }
    out.write("sweep_summary.csv", &summary)?;
    out.write("sweep_curves.csv", &curves)?;
    if results.len() == 1 {
        if let Ok(l) = &results[0].outcome {
            out.write("train.csv", &l.to_csv())?;
        }
    }
    let failures = results.iter().filter(|p| p.status() == "error").count();
    if failures > 0 {
        log::warn!("{failures} of {} sweep points failed; see sweep_points.csv", results.len());
    }
    if failures == results.len() {
        bail!("every sweep point failed");
    }
    Ok(if any_ok { Status::Completed } else { Status::Diverged })
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}
