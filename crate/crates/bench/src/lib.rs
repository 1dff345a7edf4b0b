//! Fixtures shared by the kernel benchmarks.

use smelab_core::objectives::{make_diag_quadratic, make_eggcarton, make_synthetic_classifier};
use smelab_core::{DMatrix, FiniteSumObjective};

pub fn eggcarton() -> FiniteSumObjective {
    make_eggcarton(0.2, 0.1).expect("valid parameters")
}

/// `d`-dimensional diagonal quadratic with spread-out curvatures.
pub fn diag_quadratic(d: usize) -> FiniteSumObjective {
    let a: Vec<f64> = (0..d).map(|j| 0.5 + j as f64 / d as f64).collect();
    make_diag_quadratic(&a, &vec![0.0; d], &vec![1.0; d]).expect("valid parameters")
}

pub fn classifier() -> FiniteSumObjective {
    make_synthetic_classifier(&[4, 16, 3], 256, 11).expect("valid layers")
}

/// Symmetric positive semi-definite `d × d` test matrix.
pub fn spd(d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
    &m * m.transpose() + DMatrix::identity(d, d) * 0.1
}
