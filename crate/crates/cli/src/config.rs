//! Experiment configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use smelab_core::adaptive_optim::OptimizerConfig;
use smelab_core::objectives::{
    make_diag_quadratic, make_eggcarton, make_quadratic1d, make_synthetic_classifier_with,
    make_weak_error_family, MlpOptions, WeakFamily,
};
use smelab_core::sgd_sim::Sampling;
use smelab_core::FiniteSumObjective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum ObjectiveSpec {
    #[serde(rename = "quadratic1d")]
    Quadratic1d,
    #[serde(rename = "eggcarton")]
    EggCarton {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    #[serde(rename = "weak-convex")]
    WeakConvex,
    #[serde(rename = "weak-nonconvex")]
    WeakNonconvex,
    #[serde(rename = "diag-quadratic")]
    DiagQuadratic { a: Vec<f64>, b: Vec<f64>, sigma: Vec<f64> },
    #[serde(rename = "synthetic-mlp")]
    SyntheticMlp {
        #[serde(default = "default_layers")]
        layers: Vec<usize>,
        #[serde(default = "default_samples")]
        n_samples: usize,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default = "default_l2")]
        l2: f64,
    },
}

fn default_delta() -> f64 {
    0.2
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_layers() -> Vec<usize> {
    vec![4, 16, 3]
}
fn default_samples() -> usize {
    256
}
fn default_data_seed() -> u64 {
    11
}
fn default_separation() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_l2() -> f64 {
    1e-4
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<FiniteSumObjective> {
        Ok(match self {
            Self::Quadratic1d => make_quadratic1d(),
            Self::EggCarton { delta, epsilon } => make_eggcarton(*delta, *epsilon)?,
            Self::WeakConvex => make_weak_error_family(WeakFamily::Convex).0,
            Self::WeakNonconvex => make_weak_error_family(WeakFamily::Nonconvex).0,
            Self::DiagQuadratic { a, b, sigma } => make_diag_quadratic(a, b, sigma)?,
            Self::SyntheticMlp {
                layers,
                n_samples,
                data_seed,
                separation,
                noise_std,
                l2,
            } => {
                let opts = MlpOptions {
                    separation: *separation,
                    noise_std: *noise_std,
                    l2: *l2,
                };
                make_synthetic_classifier_with(layers, *n_samples, *data_seed, opts)?
            }
        })
    }

    /// Starting point used when the config gives none.
    pub fn default_x0(&self, obj: &FiniteSumObjective, seed: u64) -> Vec<f64> {
        match self {
            Self::EggCarton { .. } => vec![1.0, 1.5],
            Self::SyntheticMlp { .. } => obj.initial_point(seed).expect("classifier has an initializer"),
            _ => vec![1.0; obj.dim()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    Msgd,
    Sme1,
    Sme2,
    SmeMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub method: Method,
    pub eta: f64,
    /// Discrete steps; SDE methods integrate to `steps · η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// SME time horizon; alternative to `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Momentum parameter for `msgd` and `sme-momentum`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Euler–Maruyama sub-steps per unit of η.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "yes")]
    pub loss: bool,
}

fn default_substeps() -> usize {
    10
}

impl SimulateSpec {
    /// Discrete step count and SME horizon.
    pub fn resolve_horizon(&self) -> Result<(usize, f64)> {
        match (self.steps, self.horizon) {
            (Some(_), Some(_)) => bail!("simulate: give either `steps` or `horizon`, not both"),
            (Some(n), None) => Ok((n, n as f64 * self.eta)),
            (None, Some(t)) if t >= 0.0 && t.is_finite() => Ok(((t / self.eta).round() as usize, t)),
            (None, Some(_)) => bail!("simulate.horizon: must be non-negative and finite"),
            (None, None) => bail!("simulate: one of `steps` or `horizon` is required"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub log_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base configurations; `eta` is overwritten by the grid.
    pub optimizers: Vec<OptimizerConfig>,
    pub eta: EtaGrid,
    pub steps: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub log_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaGrid {
    Values(Vec<f64>),
    LogUniform { low: f64, high: f64, samples: usize },
}

fn parse_with_paths<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    let located = |e: String, path: String| {
        if path == "." || path.is_empty() {
            anyhow::anyhow!(e)
        } else {
            anyhow::anyhow!("{path}: {e}")
        }
    };
    if json {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| located(e.inner().to_string(), e.path().to_string()))
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| located(e.inner().message().to_string(), e.path().to_string()))
    }
}

impl ExperimentConfig {
    /// Load `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if json {
            // a run manifest carries the resolved config it was produced from
            if let Ok(serde_json::Value::Object(m)) = serde_json::from_str::<serde_json::Value>(&text) {
                if let (Some(cfg), true) = (m.get("config"), m.contains_key("artifacts")) {
                    return Self::parse(&cfg.to_string(), true)
                        .with_context(|| format!("invalid config in manifest {}", path.display()));
                }
            }
        }
        Self::parse(&text, json).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let cfg: Self = parse_with_paths(text, json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            bail!("replicas: must be at least 1");
        }
        if let Some(s) = &self.sweep {
            if s.optimizers.is_empty() {
                bail!("sweep.optimizers: need at least one optimizer");
            }
            match &s.eta {
                EtaGrid::Values(v) if v.is_empty() => bail!("sweep.eta.values: grid is empty"),
                EtaGrid::LogUniform { low, high, samples } => {
                    if !(*low > 0.0 && low <= high && high.is_finite()) {
                        bail!("sweep.eta.log-uniform: need 0 < low <= high");
                    }
                    if *samples == 0 {
                        bail!("sweep.eta.log-uniform.samples: must be positive");
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn section<'a, T>(&self, name: &str, s: &'a Option<T>) -> Result<&'a T> {
        s.as_ref().with_context(|| format!("config `{}` has no [{name}] section", self.experiment))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
experiment = "quad"
seed = 3

[objective]
name = "quadratic1d"

[simulate]
method = "sgd"
eta = 0.005
steps = 10
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::parse(SIM, false).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b = ExperimentConfig::parse(&json, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicas, 1);
        assert_eq!(a.simulate.unwrap().resolve_horizon().unwrap(), (10, 0.05));
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let bad = SIM.replace("steps = 10", "steps = 10\netaa = 1");
        let err = ExperimentConfig::parse(&bad, false).unwrap_err().to_string();
        assert!(err.contains("simulate") && err.contains("etaa"), "{err}");
        let bad = SIM.replace("method = \"sgd\"", "method = \"sgdd\"");
        let err = ExperimentConfig::parse(&bad, false).unwrap_err().to_string();
        assert!(err.contains("simulate.method"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::parse(&SIM.replace("seed = 3", ""), false).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn objective_defaults_fill_in() {
        let cfg = ExperimentConfig::parse(&SIM.replace("quadratic1d", "eggcarton"), false).unwrap();
        assert_eq!(cfg.objective, ObjectiveSpec::EggCarton { delta: 0.2, epsilon: 0.1 });
        let obj = cfg.objective.build().unwrap();
        assert_eq!(cfg.objective.default_x0(&obj, 0), vec![1.0, 1.5]);
    }

    #[test]
    fn eta_grids_parse() {
        let text = r#"
experiment = "s"
seed = 1
[objective]
name = "synthetic-mlp"
[sweep]
steps = 10
optimizers = [{ name = "csgd", eta = 1.0 }]
eta = { log-uniform = { low = 0.1, high = 1.0, samples = 4 } }
"#;
        let cfg = ExperimentConfig::parse(text, false).unwrap();
        assert!(matches!(cfg.sweep.unwrap().eta, EtaGrid::LogUniform { samples: 4, .. }));
        let bad = text.replace("low = 0.1", "low = 2.0");
        assert!(ExperimentConfig::parse(&bad, false).is_err());
    }
}
