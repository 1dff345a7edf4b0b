use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use smelab_bench::{classifier, diag_quadratic, eggcarton, spd};
use smelab_core::adaptive_optim::{train, OptimizerConfig, TrainConfig};
use smelab_core::asymptotics::{integrate_covariance_ode, integrate_gradient_flow, lyapunov_steady_state};
use smelab_core::objectives::make_quadratic1d;
use smelab_core::sgd_sim::{run_sgd, SgdConfig};
use smelab_core::sme::{build_sme_order1, build_sme_order2, euler_maruyama, psd_sqrt, IntegratorConfig};

fn sgd_steps(c: &mut Criterion) {
    let q = make_quadratic1d();
    let cfg = SgdConfig::new(5e-3, 1000, vec![1.0], 1).with_record_every(1000);
    c.bench_function("sgd/quadratic1d/1000", |b| b.iter(|| run_sgd(black_box(&q), &cfg).unwrap()));
    let e = eggcarton();
    let cfg = SgdConfig::new(1e-4, 1000, vec![1.0, 1.5], 1).with_record_every(1000);
    c.bench_function("sgd/eggcarton/1000", |b| b.iter(|| run_sgd(black_box(&e), &cfg).unwrap()));
}

fn em_steps(c: &mut Criterion) {
    let q = make_quadratic1d();
    let sme = build_sme_order1(&q, 5e-3).unwrap();
    let cfg = IntegratorConfig::new(5e-4, 1000, vec![1.0], 1).with_record_every(1000);
    c.bench_function("em/ou/1000", |b| b.iter(|| euler_maruyama(black_box(&sme), &cfg).unwrap()));
    let e = eggcarton();
    let sme = build_sme_order2(&e, 1e-4).unwrap();
    let cfg = IntegratorConfig::new(1e-5, 1000, vec![1.0, 1.5], 1).with_record_every(1000);
    c.bench_function("em/eggcarton-order2/1000", |b| b.iter(|| euler_maruyama(black_box(&sme), &cfg).unwrap()));
}

fn linalg(c: &mut Criterion) {
    for d in [2, 8] {
        let m = spd(d);
        c.bench_function(&format!("psd_sqrt/{d}"), |b| b.iter(|| psd_sqrt(black_box(&m))));
        let h = spd(d) + smelab_core::DMatrix::identity(d, d);
        c.bench_function(&format!("lyapunov/{d}"), |b| b.iter(|| lyapunov_steady_state(black_box(&h), &m).unwrap()));
    }
}

fn covariance_ode(c: &mut Criterion) {
    let obj = diag_quadratic(4);
    let mean = integrate_gradient_flow(&obj, &[1.0; 4], 5.0, 1e-2).unwrap();
    c.bench_function("covariance_ode/diag4/500", |b| b.iter(|| integrate_covariance_ode(black_box(&obj), &mean, 1e-2).unwrap()));
}

fn optimizers(c: &mut Criterion) {
    let obj = classifier();
    let x0 = obj.initial_point(3).unwrap();
    let cfg = TrainConfig::new(100, 8, 1).with_log_every(100);
    for name in ["sgd", "csgd", "cmsgd", "adam"] {
        let oc = OptimizerConfig::new(name, 0.1);
        c.bench_function(&format!("train/mlp/{name}/100"), |b| {
            b.iter_batched(
                || oc.build(obj.dim()).unwrap(),
                |mut o| train(&obj, o.as_mut(), &x0, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, sgd_steps, em_steps, linalg, covariance_ode, optimizers);
criterion_main!(benches);
