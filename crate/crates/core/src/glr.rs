//! Least-squares fitting of the polynomial regression.
//!
//! Two routes produce the same estimates: [`fit`] factors the design matrix
//! directly, while [`GramCache`] holds `H^T H`, `H^T v` and `v^T v` of the full
//! basis over one (possibly resampled) row multiset so that any term subset is
//! a principal-submatrix solve. The selection sweep only uses the second.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Label of the modelled sensor output.
    pub target: String,
    pub basis: PolynomialBasis,
    pub beta_hat: Vec<f64>,
    /// Residual scale, `theta^2 = RSS / (n - k)`.
    pub theta_hat: f64,
    pub n_train: usize,
    /// Set when the least-squares problem was solved by pseudo-inverse.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl FittedModel {
    /// Deterministic prediction `f(x, z_alpha)^T beta`.
    pub fn predict(&self, x_row: &[f64], z_row: &[f64]) -> f64 {
        dot(&self.basis.evaluate(x_row, z_row), &self.beta_hat)
    }

    /// Prediction at the concatenated input `w = (x, z_alpha)`.
    pub fn predict_inputs(&self, w: &[f64]) -> f64 {
        dot(&self.basis.evaluate_inputs(w), &self.beta_hat)
    }

    /// Prediction for row `i` of a dataset holding the model's variables.
    pub fn predict_row(&self, ds: &CalibrationDataset, i: usize) -> f64 {
        self.predict_inputs(&self.basis.input_row(ds, i).expect("dataset lacks a model input"))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinary least squares of output column `target` on `basis`.
pub fn fit(train: &CalibrationDataset, target: usize, basis: &PolynomialBasis) -> Result<FittedModel> {
    let n = train.n();
    let k = basis.k();
    if n <= k {
        return Err(Error::Underdetermined { n, k });
    }
    if target >= train.d_y() {
        return Err(Error::InvalidConfig(format!("output index {target} out of range")));
    }
    let h = basis.design_matrix(&basis.inputs_of(train)?);
    let v = DVector::from_iterator(n, train.y.column(target).iter().copied());
    let (beta, rank_deficient) = linalg::least_squares(&h, &v)
        .ok_or_else(|| Error::NumericalFailure("least-squares solve failed".into()))?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NumericalFailure("non-finite coefficients".into()));
    }
    let resid = &v - &h * &beta;
    let theta_sq = resid.norm_squared() / (n - k) as f64;
    Ok(FittedModel {
        target: train.y_names[target].clone(),
        basis: basis.clone(),
        beta_hat: beta.iter().copied().collect(),
        theta_hat: theta_sq.sqrt(),
        n_train: n,
        rank_deficient,
    })
}

/// Sufficient statistics of the full basis over one row multiset.
#[derive(Debug, Clone)]
pub struct GramCache {
    /// `H^T W H`, row-major `k_full x k_full`, `W` = row multiplicities.
    pub gram: Vec<f64>,
    pub k: usize,
    /// `H^T W v` per output column.
    pub h: Vec<Vec<f64>>,
    /// `v^T W v` per output column.
    pub vv: Vec<f64>,
    /// The resampled row indices (the multiset identity).
    pub rows: Vec<usize>,
    /// Seed that generated `rows`, when they came from a bootstrap draw.
    pub seed: Option<u64>,
}

/// Estimates from a principal-submatrix solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFit {
    pub beta: Vec<f64>,
    pub theta: f64,
    /// The subsystem was singular and solved by pseudo-inverse.
    pub fallback: bool,
}

impl GramCache {
    /// Builds the cache over `rows` (indices into `design` / `targets`).
    pub fn from_design(rows: Vec<usize>, design: &DMatrix<f64>, targets: &DMatrix<f64>) -> GramCache {
        let k = design.ncols();
        let mut counts = vec![0usize; design.nrows()];
        for &r in &rows {
            counts[r] += 1;
        }
        let distinct: Vec<usize> = (0..design.nrows()).filter(|&i| counts[i] > 0).collect();
        let weighted = DMatrix::from_fn(distinct.len(), k, |i, j| {
            let r = distinct[i];
            (counts[r] as f64).sqrt() * design[(r, j)]
        });
        let g = weighted.tr_mul(&weighted);
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                gram[i * k + j] = g[(i, j)];
            }
        }
        let mut h = Vec::with_capacity(targets.ncols());
        let mut vv = Vec::with_capacity(targets.ncols());
        for t in 0..targets.ncols() {
            let mut ht = vec![0.0; k];
            let mut s = 0.0;
            for &r in &distinct {
                let c = counts[r] as f64;
                let v = targets[(r, t)];
                s += c * v * v;
                for (j, hj) in ht.iter_mut().enumerate() {
                    *hj += c * design[(r, j)] * v;
                }
            }
            h.push(ht);
            vv.push(s);
        }
        GramCache { gram, k, h, vv, rows, seed: None }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Principal submatrix `G[S, S]`, row-major.
    pub fn sub_gram(&self, subset: &[usize], out: &mut Vec<f64>) {
        out.clear();
        for &s in subset {
            let row = &self.gram[s * self.k..(s + 1) * self.k];
            out.extend(subset.iter().map(|&t| row[t]));
        }
    }
}

/// Gram cache for `resample_rows` of `train` over `full_basis`.
pub fn build_gram(resample_rows: &[usize], train: &CalibrationDataset, full_basis: &PolynomialBasis) -> Result<GramCache> {
    let design = full_basis.design_matrix(&full_basis.inputs_of(train)?);
    Ok(GramCache::from_design(resample_rows.to_vec(), &design, &train.y))
}

/// Reusable buffers for [`fit_from_gram_with`].
#[derive(Debug, Default)]
pub struct SolveScratch {
    sub: Vec<f64>,
    chol: Vec<f64>,
    rhs: Vec<f64>,
}

/// Least squares restricted to `term_subset` using the cached statistics.
pub fn fit_from_gram(cache: &GramCache, term_subset: &[usize], target: usize) -> Result<GramFit> {
    fit_from_gram_with(cache, term_subset, target, &mut SolveScratch::default())
}

pub fn fit_from_gram_with(cache: &GramCache, term_subset: &[usize], target: usize, scratch: &mut SolveScratch) -> Result<GramFit> {
    let k = term_subset.len();
    let n = cache.n();
    if n <= k {
        return Err(Error::Underdetermined { n, k });
    }
    cache.sub_gram(term_subset, &mut scratch.sub);
    let h = &cache.h[target];
    scratch.rhs.clear();
    scratch.rhs.extend(term_subset.iter().map(|&s| h[s]));
    let (beta, fallback) = match linalg::cholesky_solve(&scratch.sub, &scratch.rhs, k, &mut scratch.chol) {
        Some(b) => (b, false),
        None => {
            let g = DMatrix::from_row_slice(k, k, &scratch.sub);
            (linalg::pinv_solve_sym(g, &scratch.rhs), true)
        }
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NumericalFailure("non-finite coefficients from Gram solve".into()));
    }
    // RSS = v'v - 2 b'h + b'G b
    let mut quad = 0.0;
    for i in 0..k {
        let row = &scratch.sub[i * k..(i + 1) * k];
        quad += beta[i] * dot(row, &beta);
    }
    let rss = cache.vv[target] - 2.0 * dot(&beta, &scratch.rhs) + quad;
    let theta_sq = (rss / (n - k) as f64).max(0.0);
    Ok(GramFit { beta, theta: theta_sq.sqrt(), fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::full_basis;
    use rand::{Rng, SeedableRng};

    fn linear_toy(n: usize, noise: f64, seed: u64) -> CalibrationDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| r.gen_range(-3.0_f64..3.0));
        let z = DMatrix::from_fn(n, 2, |_, _| r.gen_range(-1.0_f64..1.0));
        let y = DMatrix::from_fn(n, 2, |i, j| {
            let base = 1.0 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 0)].powi(2) + 0.7 * z[(i, 0)] * x[(i, 0)];
            base * (j as f64 + 1.0) + noise * r.gen_range(-1.0..1.0)
        });
        CalibrationDataset::new(vec!["x".into()], vec!["z1".into(), "z2".into()], vec!["y1".into(), "y2".into()], x, z, y, None).unwrap()
    }

    /// Normal equations solved with an LU factorization.
    fn normal_equations(h: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        (h.transpose() * h).lu().solve(&(h.transpose() * v)).unwrap()
    }

    #[test]
    fn exact_linear_fit() {
        let mut ds = linear_toy(10, 0.0, 1);
        for i in 0..10 {
            ds.y[(i, 0)] = 2.0 * ds.x[(i, 0)];
        }
        let b = full_basis(&ds, &[], 1).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        assert!(m.theta_hat < 1e-12);
        for i in 0..10 {
            assert!((m.predict(&ds.x_row(i), &[]) - ds.y[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_normal_equations() {
        let ds = linear_toy(40, 0.3, 2);
        let b = full_basis(&ds, &[0, 1], 2).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        let h = b.design_matrix(&b.inputs_of(&ds).unwrap());
        let v = DVector::from_iterator(40, ds.y.column(0).iter().copied());
        let oracle = normal_equations(&h, &v);
        for (a, o) in m.beta_hat.iter().zip(oracle.iter()) {
            assert!((a - o).abs() < 1e-8);
        }
    }

    #[test]
    fn square_system_is_underdetermined() {
        let ds = linear_toy(3, 0.1, 3);
        let b = full_basis(&ds, &[], 2).unwrap();
        assert!(matches!(fit(&ds, 0, &b), Err(Error::Underdetermined { n: 3, k: 3 })));
    }

    #[test]
    fn identity_gram_equals_plain_gram() {
        let ds = linear_toy(30, 0.2, 4);
        let b = full_basis(&ds, &[0, 1], 2).unwrap();
        let cache = build_gram(&(0..30).collect::<Vec<_>>(), &ds, &b).unwrap();
        let h = b.design_matrix(&b.inputs_of(&ds).unwrap());
        let g = h.transpose() * &h;
        for i in 0..b.k() {
            for j in 0..b.k() {
                assert!((cache.gram[i * b.k() + j] - g[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn repeated_row_is_rank_one() {
        let ds = linear_toy(12, 0.2, 5);
        let b = full_basis(&ds, &[0], 2).unwrap();
        let cache = build_gram(&[0; 12], &ds, &b).unwrap();
        let f = b.evaluate(&ds.x_row(0), &[ds.z[(0, 0)]]);
        for i in 0..b.k() {
            for j in 0..b.k() {
                assert!((cache.gram[i * b.k() + j] - 12.0 * f[i] * f[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gram_fit_equals_refit_on_materialized_resample() {
        let ds = linear_toy(50, 0.4, 6);
        let b = full_basis(&ds, &[0, 1], 2).unwrap();
        let rows = crate::rng::resample_indices(17, 50);
        let cache = build_gram(&rows, &ds, &b).unwrap();
        let all: Vec<usize> = (0..b.k()).collect();
        let gf = fit_from_gram(&cache, &all, 1).unwrap();
        // Direct refit on the resampled rows, keeping the original normalization.
        let h = b.design_matrix(&b.inputs_of(&ds.select_rows(&rows)).unwrap());
        let v = DVector::from_iterator(50, rows.iter().map(|&r| ds.y[(r, 1)]));
        let (beta, _) = linalg::least_squares(&h, &v).unwrap();
        for (a, o) in gf.beta.iter().zip(beta.iter()) {
            assert!((a - o).abs() < 1e-8);
        }
        let rss = (&v - &h * &beta).norm_squared();
        assert!((gf.theta.powi(2) - rss / (50 - b.k()) as f64).abs() < 1e-8);
    }

    #[test]
    fn constant_only_subset() {
        let ds = linear_toy(5, 0.5, 7);
        let b = full_basis(&ds, &[], 1).unwrap();
        let cache = build_gram(&(0..5).collect::<Vec<_>>(), &ds, &b).unwrap();
        let gf = fit_from_gram(&cache, &[0], 0).unwrap();
        let v: Vec<f64> = ds.y.column(0).iter().copied().collect();
        let mean = v.iter().sum::<f64>() / 5.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((gf.beta[0] - mean).abs() < 1e-12);
        assert!((gf.theta.powi(2) - var).abs() < 1e-10);
    }

    #[test]
    fn nested_subsets_never_reduce_fit_quality() {
        let ds = linear_toy(60, 0.5, 8);
        let b = full_basis(&ds, &[0, 1], 3).unwrap();
        let cache = build_gram(&crate::rng::resample_indices(3, 60), &ds, &b).unwrap();
        let mut subset: Vec<usize> = (0..b.k()).collect();
        let mut prev_rss = 0.0;
        while subset.len() > 1 {
            let gf = fit_from_gram(&cache, &subset, 0).unwrap();
            let rss = gf.theta.powi(2) * (60 - subset.len()) as f64;
            assert!(rss + 1e-8 >= prev_rss);
            prev_rss = rss;
            subset.remove(subset.len() / 2);
        }
    }

    #[test]
    fn singular_subsystem_falls_back() {
        let ds = linear_toy(20, 0.3, 9);
        let b = full_basis(&ds, &[0, 1], 2).unwrap();
        // Four distinct rows cannot identify ten coefficients.
        let rows: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let cache = build_gram(&rows, &ds, &b).unwrap();
        let gf = fit_from_gram(&cache, &(0..b.k()).collect::<Vec<_>>(), 0).unwrap();
        assert!(gf.fallback);
        assert!(gf.beta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_matches_raw_monomials() {
        let ds = linear_toy(40, 0.2, 10);
        let b = full_basis(&ds, &[0, 1], 3).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            // Expand normalized coefficients into raw-monomial coefficients.
            let mut raw_coef = vec![0.0; b.k()];
            let mut c0 = m.beta_hat[0];
            for t in 1..b.k() {
                raw_coef[t] = m.beta_hat[t] / b.norm_std[t];
                c0 -= m.beta_hat[t] * b.norm_mean[t] / b.norm_std[t];
            }
            let oracle: f64 = c0
                + b.terms.iter().enumerate().skip(1).map(|(t, term)| {
                    raw_coef[t] * term.0.iter().zip(&w).map(|(&e, &x)| x.powi(e as i32)).product::<f64>()
                }).sum::<f64>();
            assert!((m.predict_inputs(&w) - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn constant_model_predicts_mean() {
        let ds = linear_toy(15, 0.2, 12);
        let b = full_basis(&ds, &[], 1).unwrap().select(&[0], &[0]).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        let mean = ds.y.column(0).sum() / 15.0;
        assert!((m.predict(&[10.0], &[]) - mean).abs() < 1e-10);
    }
}
