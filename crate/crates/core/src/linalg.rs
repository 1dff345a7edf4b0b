//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Asymmetry accepted by [`psd_sqrt`], relative to `max(1, max|m_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Symmetric positive semi-definite square root.
///
/// Negative eigenvalues are clamped to zero before rooting, so the result `R`
/// satisfies `R R = m_clamped`. Diagonal inputs skip the eigendecomposition.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    if is_diagonal(m) {
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = m[(i, i)].max(0.0).sqrt();
        }
        return Ok(out);
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Allocation-free [`psd_sqrt`] for hot loops; `m` must already be symmetric.
///
/// Provides closed forms for `d ≤ 2` and diagonal inputs and falls back to the
/// eigendecomposition otherwise.
pub fn psd_sqrt_into(m: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let n = m.nrows();
    if n == 1 {
        out[(0, 0)] = m[(0, 0)].max(0.0).sqrt();
        return;
    }
    if is_diagonal(m) {
        out.fill(0.0);
        for i in 0..n {
            out[(i, i)] = m[(i, i)].max(0.0).sqrt();
        }
        return;
    }
    if n == 2 {
        let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
        let half_tr = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let (hi, lo) = (half_tr + rad, half_tr - rad);
        let (rh, rl) = (hi.max(0.0).sqrt(), lo.max(0.0).sqrt());
        // R = rh P_hi + rl P_lo with P_hi = (M − lo I)/(hi − lo), P_lo = I − P_hi
        let gap = hi - lo;
        let p00 = (a - lo) / gap;
        let p01 = b / gap;
        let p11 = (c - lo) / gap;
        out[(0, 0)] = rl + (rh - rl) * p00;
        out[(1, 1)] = rl + (rh - rl) * p11;
        let off = (rh - rl) * p01;
        out[(0, 1)] = off;
        out[(1, 0)] = off;
        return;
    }
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    out.copy_from(&(q * DMatrix::from_diagonal(&roots) * q.transpose()));
    symmetrize(out);
}

/// Operator 2-norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sqrt_of_scalar() {
        let r = psd_sqrt(&DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_eq!(r[(0, 0)], 2.0);
    }

    #[test]
    fn sqrt_of_identity() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(psd_sqrt(&id).unwrap(), id);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn clamps_roundoff_negative_eigenvalues() {
        // rank-one matrix with a tiny negative perturbation on one eigenvalue
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0]);
        let mut m = &v * v.transpose();
        m[(0, 0)] -= 1e-12;
        let r = psd_sqrt(&m).unwrap();
        assert!(r.iter().all(|x| x.is_finite()));
        assert!((&r * &r - &m).norm() < 1e-6);
    }

    #[test]
    fn random_psd_3x3_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 0.5, 0.9, 1.1]);
        let m = &a * a.transpose();
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * &r - &m).norm() < 1e-10);
    }

    #[test]
    fn closed_form_2x2_matches_eigendecomposition() {
        for entries in [[2.0, 0.3, 0.3, 1.0], [1.0, 1.0, 1.0, 1.0], [0.5, -0.2, -0.2, 3.0], [1.0, 2.0, 2.0, 1.0]] {
            let m = DMatrix::from_row_slice(2, 2, &entries);
            let mut fast = DMatrix::zeros(2, 2);
            psd_sqrt_into(&m, &mut fast);
            let slow = psd_sqrt(&m).unwrap();
            assert!((&fast - &slow).norm() < 1e-12, "{m}");
        }
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(entries in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let a = DMatrix::from_row_slice(3, 3, &entries);
            let m = &a * a.transpose();
            let r = psd_sqrt(&m).unwrap();
            prop_assert!((&r * &r - &m).norm() < 1e-10 * (1.0 + m.norm()));
            prop_assert!(max_asymmetry(&r) == 0.0);
        }
    }
}
