//! Expected conditional prediction variance of a calibrated model.
//!
//! For a model `v(X, Z) = f(X, Z)^T beta + theta xi` the quantity minimized by
//! the selection is
//!
//! ```text
//! V = m_f^T C_beta m_f + E[theta^2] + Tr(C_f C_beta)
//! ```
//!
//! where `m_f`, `C_f` are the mean and covariance of the feature vector over
//! the training rows and `C_beta`, `E[theta^2]` come from bootstrap refits.
//! The three terms are, respectively, estimation uncertainty, model error and
//! the lack of robustness of over-complex models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::glr::{fit_from_gram_with, GramCache, SolveScratch};

/// Share of pseudo-inverse replicates above which a report is flagged.
pub const FALLBACK_WARN_FRACTION: f64 = 0.10;

/// Numerical floor for the three variance terms.
pub const TERM_FLOOR: f64 = -1e-12;

/// Sample mean and unbiased covariance of the rows of a design matrix.
pub fn moments_of_design(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let k = h.ncols();
    let mean: Vec<f64> = (0..k).map(|j| h.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, k, |i, j| h[(i, j)] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.tr_mul(&centered) / denom;
    (mean, cov)
}

/// Monte-Carlo mean `m_f` and covariance `C_f` of the features over `train`.
pub fn f_moments(basis: &PolynomialBasis, train: &CalibrationDataset) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if train.n() < 2 {
        return Err(Error::Underdetermined { n: train.n(), k: 2 });
    }
    Ok(moments_of_design(&basis.design_matrix(&basis.inputs_of(train)?)))
}

/// Bootstrap replicates of `(beta, theta)` and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    /// One coefficient vector per replicate (`B x k`).
    pub betas: Vec<Vec<f64>>,
    pub thetas: Vec<f64>,
    /// Seeds of the resamples; shared across outputs and models of one run.
    pub resample_seeds: Vec<u64>,
    pub m_beta: Vec<f64>,
    pub c_beta: DMatrix<f64>,
    pub mean_theta_sq: f64,
    /// Replicates solved by pseudo-inverse.
    pub fallback_count: usize,
}

impl BootstrapEnsemble {
    pub fn from_replicates(betas: Vec<Vec<f64>>, thetas: Vec<f64>, resample_seeds: Vec<u64>, fallback_count: usize) -> Result<Self> {
        let b = betas.len();
        if b < 2 || thetas.len() != b {
            return Err(Error::InvalidConfig("a bootstrap ensemble needs at least two replicates".into()));
        }
        let k = betas[0].len();
        let mut m_beta = vec![0.0; k];
        for beta in &betas {
            for (m, v) in m_beta.iter_mut().zip(beta) {
                *m += v;
            }
        }
        m_beta.iter_mut().for_each(|m| *m /= b as f64);
        let centered = DMatrix::from_fn(b, k, |r, j| betas[r][j] - m_beta[j]);
        let mut c_beta = centered.tr_mul(&centered) / (b - 1) as f64;
        c_beta = (&c_beta + c_beta.transpose()) * 0.5;
        let mean_theta_sq = thetas.iter().map(|t| t * t).sum::<f64>() / b as f64;
        Ok(BootstrapEnsemble { betas, thetas, resample_seeds, m_beta, c_beta, mean_theta_sq, fallback_count })
    }

    pub fn replicates(&self) -> usize {
        self.betas.len()
    }
}

/// Refits `term_subset` on every cache (one per bootstrap resample).
pub fn bootstrap_ensemble(term_subset: &[usize], target: usize, caches: &[GramCache]) -> Result<BootstrapEnsemble> {
    if caches.len() < 2 {
        return Err(Error::InvalidConfig("at least two bootstrap resamples are required".into()));
    }
    let mut scratch = SolveScratch::default();
    let mut betas = Vec::with_capacity(caches.len());
    let mut thetas = Vec::with_capacity(caches.len());
    let mut fallback = 0;
    for cache in caches {
        let fit = fit_from_gram_with(cache, term_subset, target, &mut scratch)?;
        fallback += usize::from(fit.fallback);
        betas.push(fit.beta);
        thetas.push(fit.theta);
    }
    if fallback == caches.len() {
        return Err(Error::AllReplicatesSingular);
    }
    let seeds = caches.iter().map(|c| c.seed.unwrap_or(0)).collect();
    BootstrapEnsemble::from_replicates(betas, thetas, seeds, fallback)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// `m_f^T C_beta m_f`
    pub term_estimation: f64,
    /// `E[theta^2]`
    pub term_model_error: f64,
    /// `Tr(C_f C_beta)`
    pub term_robustness: f64,
    pub v: f64,
    pub bic: f64,
    pub k: usize,
    pub n: usize,
    pub fallback_count: usize,
    pub replicates: usize,
    /// More than 10% of the replicates needed the pseudo-inverse.
    pub reliability_warning: bool,
}

/// `n log(V) + k log(n)` (natural logarithm).
pub fn bic(v: f64, k: usize, n: usize) -> f64 {
    n as f64 * v.ln() + k as f64 * (n as f64).ln()
}

/// Variance objective and BIC; `m_f` / `c_f` must be restricted to the
/// ensemble's terms. `n` is the training sample count.
pub fn variance_objective(m_f: &[f64], c_f: &DMatrix<f64>, ensemble: &BootstrapEnsemble, n: usize) -> Result<VarianceReport> {
    let k = ensemble.m_beta.len();
    if m_f.len() != k || c_f.nrows() != k || c_f.ncols() != k {
        return Err(Error::DimensionMismatch(format!("feature moments of size {} vs {k} coefficients", m_f.len())));
    }
    let cb = &ensemble.c_beta;
    let mut term_estimation = 0.0;
    let mut term_robustness = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += cb[(i, j)] * m_f[j];
            term_robustness += c_f[(i, j)] * cb[(j, i)];
        }
        term_estimation += m_f[i] * row;
    }
    let term_model_error = ensemble.mean_theta_sq;
    for t in [term_estimation, term_robustness, term_model_error] {
        if t < TERM_FLOOR {
            return Err(Error::NumericalFailure(format!("negative variance term {t}")));
        }
    }
    let v = term_estimation.max(0.0) + term_model_error.max(0.0) + term_robustness.max(0.0);
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonpositiveVariance(v));
    }
    let replicates = ensemble.replicates();
    Ok(VarianceReport {
        term_estimation,
        term_model_error,
        term_robustness,
        v,
        bic: bic(v, k, n),
        k,
        n,
        fallback_count: ensemble.fallback_count,
        replicates,
        reliability_warning: ensemble.fallback_count as f64 > FALLBACK_WARN_FRACTION * replicates as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::full_basis;
    use crate::rng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn linear_gaussian(n: usize, sigma: f64, seed: u64) -> CalibrationDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| r.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| 1.0 + 2.0 * x[(i, 0)] + sigma * r.sample::<f64, _>(StandardNormal));
        CalibrationDataset::new(vec!["w".into()], vec![], vec!["v".into()], x, DMatrix::zeros(n, 0), y, None).unwrap()
    }

    fn caches(ds: &CalibrationDataset, basis: &PolynomialBasis, b: usize, seed: u64) -> Vec<GramCache> {
        let design = basis.design_matrix(&basis.inputs_of(ds).unwrap());
        (0..b)
            .map(|i| {
                let s = rng::child_seed(seed, "test/bootstrap", i as u64);
                let mut c = GramCache::from_design(rng::resample_indices(s, ds.n()), &design, &ds.y);
                c.seed = Some(s);
                c
            })
            .collect()
    }

    #[test]
    fn constant_basis_moments() {
        let ds = linear_gaussian(20, 0.1, 1);
        let b = full_basis(&ds, &[], 1).unwrap().select(&[0], &[0]).unwrap();
        let (m, c) = f_moments(&b, &ds).unwrap();
        assert_eq!(m, vec![1.0]);
        assert_eq!(c[(0, 0)], 0.0);
    }

    #[test]
    fn normalized_moments() {
        let ds = linear_gaussian(50, 0.1, 2);
        let b = full_basis(&ds, &[], 3).unwrap();
        let (m, c) = f_moments(&b, &ds).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12);
        for j in 1..b.k() {
            assert!(m[j].abs() < 1e-10);
            assert!((c[(j, j)] - 50.0 / 49.0).abs() < 1e-10);
        }
    }

    #[test]
    fn moments_match_two_pass_oracle() {
        let ds = linear_gaussian(40, 0.1, 3);
        let b = full_basis(&ds, &[], 3).unwrap();
        let h = b.design_matrix(&b.inputs_of(&ds).unwrap());
        let (m, c) = moments_of_design(&h);
        let n = 40.0;
        for a in 0..b.k() {
            let ma: f64 = (0..40).map(|i| h[(i, a)]).sum::<f64>() / n;
            assert!((ma - m[a]).abs() < 1e-10);
            for bb in 0..b.k() {
                let mb: f64 = (0..40).map(|i| h[(i, bb)]).sum::<f64>() / n;
                let cov: f64 = (0..40).map(|i| (h[(i, a)] - ma) * (h[(i, bb)] - mb)).sum::<f64>() / (n - 1.0);
                assert!((cov - c[(a, bb)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn exact_data_has_no_coefficient_spread() {
        let ds = linear_gaussian(60, 0.0, 4);
        let b = full_basis(&ds, &[], 1).unwrap();
        let ens = bootstrap_ensemble(&[0, 1], 0, &caches(&ds, &b, 30, 5)).unwrap();
        assert!(ens.c_beta.iter().all(|v| v.abs() <= 1e-10));
        assert!(ens.mean_theta_sq < 1e-10);
        let (m, c) = f_moments(&b, &ds).unwrap();
        let rep = variance_objective(&m, &c, &ens, 60);
        // V collapses to rounding level (or exactly zero, which is rejected).
        assert!(matches!(rep, Err(Error::NonpositiveVariance(_))) || rep.unwrap().v < 1e-10);
    }

    #[test]
    fn identical_resamples_give_zero_covariance() {
        let ds = linear_gaussian(30, 0.5, 6);
        let b = full_basis(&ds, &[], 1).unwrap();
        let c = caches(&ds, &b, 1, 7);
        let two = vec![c[0].clone(), c[0].clone()];
        let ens = bootstrap_ensemble(&[0, 1], 0, &two).unwrap();
        assert!(ens.c_beta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_coefficient_covariance_gives_model_error() {
        let ens = BootstrapEnsemble::from_replicates(vec![vec![1.0, 2.0]; 3], vec![0.5; 3], vec![0; 3], 0).unwrap();
        let rep = variance_objective(&[1.0, 0.0], &DMatrix::identity(2, 2), &ens, 50).unwrap();
        assert_eq!(rep.v, 0.25);
        assert_eq!(rep.term_estimation, 0.0);
    }

    #[test]
    fn bic_value() {
        assert!((bic(1.0, 10, 200) - 52.983).abs() < 1e-3);
        assert!(bic(0.3, 6, 200) > bic(0.3, 5, 200));
    }

    #[test]
    fn slope_variance_matches_sandwich_estimator() {
        // Pairs bootstrap targets the heteroskedasticity-robust covariance
        // (H'H)^-1 H' diag(e^2) H (H'H)^-1 of the observed sample.
        let ds = linear_gaussian(200, 0.5, 8);
        let b = full_basis(&ds, &[], 1).unwrap();
        let ens = bootstrap_ensemble(&[0, 1], 0, &caches(&ds, &b, 2000, 9)).unwrap();
        let h = b.design_matrix(&b.inputs_of(&ds).unwrap());
        let fit = crate::glr::fit(&ds, 0, &b).unwrap();
        let inv = (h.transpose() * &h).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..ds.n() {
            let e = ds.y[(i, 0)] - fit.predict_row(&ds, i);
            let row = h.row(i).transpose();
            meat += &row * row.transpose() * (e * e);
        }
        let oracle = (&inv * meat * &inv)[(1, 1)];
        let rel = (ens.c_beta[(1, 1)] - oracle).abs() / oracle;
        assert!(rel < 0.10, "bootstrap {} vs sandwich {oracle}", ens.c_beta[(1, 1)]);
    }

    #[test]
    fn v_is_invariant_to_term_order() {
        let ds = linear_gaussian(80, 0.3, 10);
        let b = full_basis(&ds, &[], 3).unwrap();
        let cs = caches(&ds, &b, 40, 11);
        let (m, c) = f_moments(&b, &ds).unwrap();
        let score = |order: &[usize]| {
            let ens = bootstrap_ensemble(order, 0, &cs).unwrap();
            let mf: Vec<f64> = order.iter().map(|&i| m[i]).collect();
            let cf = DMatrix::from_fn(order.len(), order.len(), |i, j| c[(order[i], order[j])]);
            variance_objective(&mf, &cf, &ens, 80).unwrap().v
        };
        assert!((score(&[0, 1, 2, 3]) - score(&[3, 0, 2, 1])).abs() < 1e-8);
    }
}
