//! Euler–Maruyama ensembles against closed forms and moment ODEs.

use smelab_core::moments_control::{integrate_lr_moment, momentum_steady_state, QuadraticModel};
use smelab_core::objectives::{make_quadratic1d, make_weak_error_family, WeakFamily};
use smelab_core::sgd_sim::ensemble_moments;
use smelab_core::sme::{
    build_sme_lr, build_sme_momentum, build_sme_order1, constant_schedule, euler_maruyama_replica,
    quadratic_sme_distribution, IntegratorConfig,
};
use smelab_core::weak_error::{weak_error, Estimator, SmeOrder, WeakErrorSetup};
use smelab_core::EnsembleMoments;

const ETA: f64 = 5e-3;

fn second_moment(ens: &EnsembleMoments, i: usize) -> f64 {
    ens.mean[i][0].powi(2) + ens.variance(i, 0).unwrap()
}

#[test]
fn em_reproduces_ou_moments() {
    let q = make_quadratic1d();
    let sme = build_sme_order1(&q, ETA).unwrap();
    let cfg = IntegratorConfig::for_learning_rate(ETA, 1.5, vec![1.0], 31).with_record_every(500);
    let ens = ensemble_moments(5000, |r| euler_maruyama_replica(&sme, &cfg, r)).unwrap();
    for i in 1..ens.len() {
        let exact = quadratic_sme_distribution(ETA, 1.0, ens.times[i]).unwrap();
        let z_mean = (ens.mean[i][0] - exact.mean[0]).abs() / ens.mean_stderr(i, 0).unwrap();
        let z_std = (ens.variance(i, 0).unwrap().sqrt() - exact.std(0)).abs() / ens.std_stderr(i, 0).unwrap();
        assert!(z_mean < 3.0 && z_std < 3.0, "t={} z=({z_mean}, {z_std})", ens.times[i]);
    }
}

#[test]
fn halving_the_step_leaves_moments_unchanged() {
    let q = make_quadratic1d();
    let sme = build_sme_order1(&q, ETA).unwrap();
    let horizon = 1.0;
    let run = |dt: f64, seed: u64| {
        let steps = (horizon / dt).round() as usize;
        let cfg = IntegratorConfig::new(dt, steps, vec![1.0], seed).with_record_every(steps);
        ensemble_moments(4000, |r| euler_maruyama_replica(&sme, &cfg, r)).unwrap()
    };
    let (coarse, fine) = (run(ETA / 10.0, 1), run(ETA / 20.0, 2));
    let se = coarse.mean_stderr(1, 0).unwrap().hypot(fine.mean_stderr(1, 0).unwrap());
    assert!((coarse.mean[1][0] - fine.mean[1][0]).abs() < 3.0 * se);
    let (vc, vf) = (coarse.variance(1, 0).unwrap(), fine.variance(1, 0).unwrap());
    // var of a sample variance of Gaussians ≈ 2σ⁴/(R−1)
    let se_var = (2.0 * vc * vc / 3999.0 + 2.0 * vf * vf / 3999.0).sqrt();
    assert!((vc - vf).abs() < 3.0 * se_var, "{vc} vs {vf}");
}

#[test]
fn momentum_sme_settles_at_moment_fixed_point() {
    let q = make_quadratic1d();
    let model = QuadraticModel::new(2.0, 0.0, 4.0, ETA).unwrap();
    let mu = 0.8;
    let sme = build_sme_momentum(&q, ETA, constant_schedule(mu)).unwrap();
    // state layout is (V, X); X starts at 1 with zero velocity
    let cfg = IntegratorConfig::for_learning_rate(ETA, 4.0, vec![0.0, 1.0], 17).with_record_every(100);
    let ens = ensemble_moments(2000, |r| euler_maruyama_replica(&sme, &cfg, r)).unwrap();
    let late: Vec<f64> = (0..ens.len())
        .filter(|&i| ens.times[i] >= 2.0)
        .map(|i| ens.mean[i][1].powi(2) + ens.variance(i, 1).unwrap())
        .collect();
    let ef = late.iter().sum::<f64>() / late.len() as f64;
    let target = momentum_steady_state(mu, &model).unwrap().ef;
    assert!((ef - target).abs() < 0.05 * target, "{ef} vs {target}");
}

#[test]
fn learning_rate_sme_follows_moment_ode() {
    let q = make_quadratic1d();
    let model = QuadraticModel::new(2.0, 0.0, 4.0, ETA).unwrap();
    let u = 0.4;
    let sme = build_sme_lr(&q, ETA, constant_schedule(u)).unwrap();
    let cfg = IntegratorConfig::for_learning_rate(ETA, 2.0, vec![1.0], 3).with_record_every(400);
    let ens = ensemble_moments(4000, |r| euler_maruyama_replica(&sme, &cfg, r)).unwrap();
    let path = integrate_lr_moment(&model, |_, _| u, 1.0, 2.0, 1e-3).unwrap();
    for i in 1..ens.len() {
        let t = ens.times[i];
        let m = path.m[(t / 1e-3).round() as usize];
        let mc = second_moment(&ens, i);
        // f = x², so the second moment of x is the expected loss; SE via Gaussian fourth moments
        let (mean, var) = (ens.mean[i][0], ens.variance(i, 0).unwrap());
        let se = ((2.0 * var * var + 4.0 * mean * mean * var) / 4000.0).sqrt();
        assert!((mc - m).abs() < 3.0 * se, "t={t}: {mc} vs {m}");
    }
}

#[test]
fn monte_carlo_weak_error_agrees_with_exact() {
    let (obj, g) = make_weak_error_family(WeakFamily::Convex);
    let setup = WeakErrorSetup::default();
    let mc = Estimator::MonteCarlo {
        replicas: 200_000,
        seed: 12,
        substeps: 10,
    };
    for order in [SmeOrder::First, SmeOrder::Second] {
        let exact = weak_error(&obj, &g, 0.05, &setup, order, Estimator::Exact).unwrap();
        let approx = weak_error(&obj, &g, 0.05, &setup, order, mc).unwrap();
        assert!(approx.stderr > 0.0);
        assert!(
            (approx.error - exact.error).abs() < 4.0 * approx.stderr,
            "{order:?}: {} vs {} ± {}",
            approx.error,
            exact.error,
            approx.stderr
        );
    }
}
