use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn smelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smelab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_config(cmd: &str, cfg: &Path, out: &Path) -> Output {
    smelab(&[cmd, "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir.join("manifest.json"))).unwrap()
}

const QUAD_SGD: &str = r#"
experiment = "quad-sgd"
seed = 7

[objective]
name = "quadratic1d"

[simulate]
method = "sgd"
eta = 0.005
steps = 1000
"#;

#[test]
fn simulate_writes_one_row_per_step_and_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "quad.toml", QUAD_SGD);
    let out = tmp.path().join("run");
    let o = run_config("simulate", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("trajectory.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,t,x_0,loss"));
    assert_eq!(lines.count(), 1001);
    let m = manifest(&out);
    assert_eq!(m["status"], "completed");
    assert_eq!(m["config"]["seed"], 7);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(artifacts.contains(&"trajectory.csv") && artifacts.contains(&"config.json"));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let text = QUAD_SGD.replace("seed = 7", "seed = 7\nreplicas = 50");
    let cfg = write_config(tmp.path(), "quad.toml", &text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_config("simulate", &cfg, &a).status.success());
    assert!(run_config("simulate", &cfg, &b).status.success());
    assert_eq!(read(a.join("moments.csv")), read(b.join("moments.csv")));
    // the manifest itself is a valid config that reproduces the run
    let c = tmp.path().join("c");
    assert!(run_config("simulate", &a.join("manifest.json"), &c).status.success());
    assert_eq!(read(a.join("moments.csv")), read(c.join("moments.csv")));
}

#[test]
fn json_config_is_accepted() {
    let tmp = TempDir::new().unwrap();
    let json = r#"{"experiment":"j","seed":1,"objective":{"name":"quadratic1d"},
        "simulate":{"method":"msgd","eta":0.005,"steps":20,"mu":0.9}}"#;
    let cfg = write_config(tmp.path(), "quad.json", json);
    let out = tmp.path().join("run");
    assert!(run_config("simulate", &cfg, &out).status.success());
    assert!(read(out.join("trajectory.csv")).starts_with("step,t,x_0,v_0,loss\n"));
}

#[test]
fn sme_output_is_in_sme_time() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
experiment = "egg"
seed = 3
[objective]
name = "eggcarton"
[simulate]
method = "sme2"
eta = 0.01
horizon = 0.5
"#;
    let cfg = write_config(tmp.path(), "egg.toml", text);
    let out = tmp.path().join("run");
    let o = run_config("simulate", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("trajectory.csv"));
    assert!(csv.starts_with("step,t,x_0,x_1,loss\n"));
    let last = csv.lines().last().unwrap();
    let t: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((t - 0.5).abs() < 1e-9, "{last}");
    assert_eq!(csv.lines().count(), 52);
}

#[test]
fn schema_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &QUAD_SGD.replace("steps = 1000", "stepz = 1000"));
    let o = run_config("simulate", &cfg, &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("simulate") && err.contains("stepz"), "{err}");
}

fn mlp_train(optimizer: &str, steps: usize) -> String {
    format!(
        r#"
experiment = "mlp"
seed = 5
[objective]
name = "synthetic-mlp"
[train]
steps = {steps}
batch_size = 4
log_every = 50
optimizer = {optimizer}
"#
    )
}

fn losses(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn csgd_at_unit_rate_completes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &mlp_train(r#"{ name = "csgd", eta = 1.0 }"#, 1000));
    let out = tmp.path().join("run");
    let o = run_config("train", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("train.csv"));
    assert!(csv.starts_with("step,loss,mean_u,mean_mu,mean_beta\n"));
    let l = losses(&csv);
    assert!(l.last().unwrap() < &l[0]);
    let summary: serde_json::Value = serde_json::from_str(&read(out.join("summary.json"))).unwrap();
    assert!(summary["diverged_at"].is_null());
}

#[test]
fn adam_decreases_loss() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &mlp_train(r#"{ name = "adam", eta = 1e-3 }"#, 1000));
    let out = tmp.path().join("run");
    assert!(run_config("train", &cfg, &out).status.success());
    let l = losses(&read(out.join("train.csv")));
    assert!(*l.last().unwrap() < 0.9 * l[0], "{l:?}");
}

#[test]
fn divergence_is_flagged_with_its_own_exit_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &mlp_train(r#"{ name = "msgd", eta = 1.0, mu = 0.99 }"#, 1000));
    let out = tmp.path().join("run");
    let o = run_config("train", &cfg, &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["status"], "diverged");
    assert!(out.join("train.csv").exists());
}

fn sweep_config(optimizers: &str, eta: &str) -> String {
    format!(
        r#"
experiment = "sweep"
seed = 5
[objective]
name = "synthetic-mlp"
[sweep]
steps = 400
batch_size = 4
log_every = 50
optimizers = {optimizers}
eta = {eta}
"#
    )
}

#[test]
fn single_point_sweep_matches_train() {
    let tmp = TempDir::new().unwrap();
    let sweep = write_config(tmp.path(), "s.toml", &sweep_config(r#"[{ name = "csgd", eta = 0.0 }]"#, "{ values = [0.3] }"));
    let train = write_config(tmp.path(), "t.toml", &mlp_train(r#"{ name = "csgd", eta = 0.3 }"#, 400));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_config("sweep", &sweep, &a).status.success());
    assert!(run_config("train", &train, &b).status.success());
    assert_eq!(read(a.join("train.csv")), read(b.join("train.csv")));
}

#[test]
fn sweep_reports_worst_median_best_per_optimizer() {
    let tmp = TempDir::new().unwrap();
    let text = sweep_config(
        r#"[{ name = "csgd", eta = 1.0 }, { name = "sgd", eta = 1.0 }]"#,
        "{ log-uniform = { low = 0.1, high = 1.0, samples = 10 } }",
    );
    let cfg = write_config(tmp.path(), "s.toml", &text);
    let out = tmp.path().join("run");
    let o = run_config("sweep", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let points = read(out.join("sweep_points.csv"));
    assert_eq!(points.lines().count(), 21);
    let summary = read(out.join("sweep_summary.csv"));
    for opt in ["csgd", "sgd"] {
        for rank in ["best", "median", "worst"] {
            assert!(summary.lines().any(|l| l.starts_with(&format!("{opt},{rank},"))), "{summary}");
        }
    }
    // both optimizers see the same learning rates
    let etas = |name: &str| -> Vec<String> {
        points.lines().filter(|l| l.starts_with(&format!("{name},"))).map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
    };
    assert_eq!(etas("csgd"), etas("sgd"));
    assert!(read(out.join("sweep_curves.csv")).starts_with("optimizer,rank,step,loss\n"));
}

#[test]
fn failed_sweep_points_are_recorded() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", &sweep_config(r#"[{ name = "csgd", eta = 1.0 }]"#, "{ values = [0.3, -1.0] }"));
    let out = tmp.path().join("run");
    assert!(run_config("sweep", &cfg, &out).status.success());
    let points = read(out.join("sweep_points.csv"));
    assert!(points.lines().any(|l| l.contains(",-1,") && l.contains(",error,")), "{points}");
}

#[test]
fn unknown_figure_lists_choices() {
    let o = smelab(&["figure", "fig9"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fig1") && err.contains("sm-fig7"), "{err}");
}

#[test]
fn weak_order_figure_reports_slopes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fig7");
    let o = smelab(&["figure", "sm-fig7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let slopes: serde_json::Value = serde_json::from_str(&read(out.join("sm_fig7_summary.json"))).unwrap();
    let convex2 = slopes.as_array().unwrap().iter().find(|s| s["family"] == "weak-convex" && s["order"] == 2).unwrap();
    assert!((convex2["slope"].as_f64().unwrap() - 2.0).abs() < 0.25);
    assert!(read(out.join("sm_fig7_weak_convex.csv")).starts_with("eta,order,steps,sgd,sme,weak_error,stderr\n"));
}

#[test]
fn transition_figure_runs_with_fewer_replicas() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fig1");
    let o = smelab(&["figure", "fig1", "--replicas", "200", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&read(out.join("fig1_summary.json"))).unwrap();
    assert_eq!(s["k_star"].as_f64().unwrap().round(), 264.0);
    assert_eq!(s["replicas"], 200);
    assert_eq!(manifest(&out)["config"]["replicas"], 200);
}

#[test]
fn momentum_figure_writes_eigenvalue_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fig4");
    let o = smelab(&["figure", "fig4", "--replicas", "100", "--threads", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(out.join("fig4_eigenvalues.csv")).lines().count(), 1001);
    let s: serde_json::Value = serde_json::from_str(&read(out.join("fig4_summary.json"))).unwrap();
    assert!((s["mu_opt"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn shipped_configs_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let tmp = TempDir::new().unwrap();
    for (file, cmd) in [
        ("quadratic-ensemble.toml", "simulate"),
        ("eggcarton-sme.toml", "simulate"),
        ("classifier-csgd.toml", "train"),
        ("classifier-sweep.toml", "sweep"),
    ] {
        let out = tmp.path().join(file);
        let o = smelab(&[cmd, "-c", dir.join(file).to_str().unwrap(), "--out", out.to_str().unwrap(), "--replicas", "20"]);
        assert!(o.status.success(), "{file}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.json").exists());
    }
}
