//! Small dense solvers shared by the fitting code.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance below which pivots / eigenvalues / singular values are
/// treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Solves `a x = b` for symmetric `a` (row-major `k x k`) by Cholesky.
/// Returns `None` when a pivot falls below `RANK_TOL` times the largest
/// diagonal entry, i.e. the system is (numerically) singular.
pub fn cholesky_solve(a: &[f64], b: &[f64], k: usize, work: &mut Vec<f64>) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), k * k);
    work.clear();
    work.extend_from_slice(a);
    let l = work;
    let max_diag = (0..k).map(|i| a[i * k + i]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let floor = RANK_TOL * max_diag;
    for j in 0..k {
        let mut d = l[j * k + j];
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let mut s = l[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s / d;
        }
    }
    let mut x = b.to_vec();
    for i in 0..k {
        let mut s = x[i];
        for p in 0..i {
            s -= l[i * k + p] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = x[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Some(x)
}

/// Minimum-norm solution of `a x = b` for symmetric positive semidefinite `a`
/// through its eigendecomposition, discarding eigenvalues below `RANK_TOL`
/// times the largest one.
pub fn pinv_solve_sym(a: DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cut = RANK_TOL * max;
    let bv = DVector::from_column_slice(b);
    let proj = eig.eigenvectors.tr_mul(&bv);
    let scaled = DVector::from_fn(proj.len(), |i, _| {
        let lam = eig.eigenvalues[i];
        if lam > cut {
            proj[i] / lam
        } else {
            0.0
        }
    });
    (&eig.eigenvectors * scaled).iter().copied().collect()
}

/// Least squares `min |h beta - v|` by Householder QR; falls back to the SVD
/// pseudo-inverse when `R` has a diagonal entry below `RANK_TOL` relative to
/// the largest. The flag reports the fallback.
pub fn least_squares(h: &DMatrix<f64>, v: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let k = h.ncols();
    if h.nrows() >= k {
        let qr = h.clone().qr();
        let r = qr.r();
        let max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
        let full_rank = max > 0.0 && (0..k).all(|i| r[(i, i)].abs() > RANK_TOL * max);
        if full_rank {
            let qtv = qr.q().tr_mul(v);
            if let Some(beta) = r.solve_upper_triangular(&qtv) {
                if beta.iter().all(|b| b.is_finite()) {
                    return Some((beta, false));
                }
            }
        }
    }
    let svd = h.clone().svd(true, true);
    let max = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    let beta = svd.solve(v, RANK_TOL * max).ok()?;
    Some((beta, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_matches_direct_solve() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let b = [1.0, 2.0, 3.0];
        let mut w = Vec::new();
        let x = cholesky_solve(&a, &b, 3, &mut w).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &a);
        let r = &m * DVector::from_column_slice(&x) - DVector::from_column_slice(&b);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn singular_detected_and_pinv_is_min_norm() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let mut w = Vec::new();
        assert!(cholesky_solve(&a, &[2.0, 2.0], 2, &mut w).is_none());
        let x = pinv_solve_sym(DMatrix::from_row_slice(2, 2, &a), &[2.0, 2.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
