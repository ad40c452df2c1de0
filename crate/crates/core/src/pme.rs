//! Proportional marginal effects (PME) of a model's inputs.
//!
//! For a coalition `C` of inputs let `v(C) = E[Var(h | W_{-C})] / Var(h)`, the
//! share of output variance left once every input outside `C` is known (the
//! total index of `C`). The PME of input `j` averages its marginal
//! contribution `v(C + j) - v(C)` over all orderings of the inputs, weighting
//! each ordering by the inverse product of `v` along its prefixes. Orderings
//! that pass through a coalition with `v = 0` dominate, which is what sends
//! the PME of an input with no effect of its own to zero even when it is
//! correlated with influential ones.
//!
//! `v(C)` is estimated by redrawing `W_C` from its conditional distribution
//! given `W_{-C}` and averaging `(h(W) - h(W'))^2 / 2`. Every subset uses the
//! same base draws and the same redraw noise, so subsets that do not touch an
//! input see exactly identical outputs.

use nalgebra::{DMatrix, DVector};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::glr::FittedModel;
use crate::rng;

/// Largest input count handled by exact permutation enumeration.
pub const MAX_INPUTS: usize = 9;

/// Floor applied to coalition indices inside the permutation weights.
pub const WEIGHT_FLOOR: f64 = 1e-12;

pub const DEFAULT_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    GaussianAnalytic,
    GaussianCopulaEmpirical,
}

/// Joint input distribution, Gaussian in a latent space.
///
/// The analytic sampler draws the inputs themselves from `N(mean, cov)`. The
/// copula sampler draws normal scores from `N(0, corr)` and maps each margin
/// through the empirical quantile function of the training column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSampler {
    pub kind: SamplerKind,
    pub mean: Vec<f64>,
    /// Covariance of the inputs, or the normal-scores correlation.
    pub cov: DMatrix<f64>,
    /// Sorted training columns (copula only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marginals: Vec<Vec<f64>>,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl InputSampler {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch("sampler mean / covariance".into()));
        }
        Ok(InputSampler { kind: SamplerKind::GaussianAnalytic, mean, cov, marginals: Vec::new() })
    }

    /// Fits either sampler to the rows of `inputs`.
    pub fn fit(kind: SamplerKind, inputs: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = inputs.shape();
        if n < 2 {
            return Err(Error::EmptyInput("at least two rows are needed to fit an input sampler".into()));
        }
        match kind {
            SamplerKind::GaussianAnalytic => {
                let (mean, cov) = column_moments(inputs);
                InputSampler::gaussian(mean, cov)
            }
            SamplerKind::GaussianCopulaEmpirical => {
                let normal = std_normal();
                let mut scores = DMatrix::zeros(n, d);
                let mut marginals = Vec::with_capacity(d);
                for j in 0..d {
                    let col: Vec<f64> = inputs.column(j).iter().copied().collect();
                    for (i, r) in average_ranks(&col).into_iter().enumerate() {
                        scores[(i, j)] = normal.inverse_cdf(r / (n as f64 + 1.0));
                    }
                    let mut sorted = col;
                    sorted.sort_by(f64::total_cmp);
                    marginals.push(sorted);
                }
                let (_, cov) = column_moments(&scores);
                let sd: Vec<f64> = (0..d).map(|j| cov[(j, j)].sqrt()).collect();
                let corr = DMatrix::from_fn(d, d, |a, b| {
                    if a == b {
                        1.0
                    } else if sd[a] > 0.0 && sd[b] > 0.0 {
                        cov[(a, b)] / (sd[a] * sd[b])
                    } else {
                        0.0
                    }
                });
                Ok(InputSampler { kind, mean: vec![0.0; d], cov: corr, marginals })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps a latent draw to input space.
    pub fn to_input(&self, g: &[f64], out: &mut [f64]) {
        match self.kind {
            SamplerKind::GaussianAnalytic => out.copy_from_slice(g),
            SamplerKind::GaussianCopulaEmpirical => {
                let normal = std_normal();
                for (j, (o, &gj)) in out.iter_mut().zip(g).enumerate() {
                    *o = empirical_quantile(&self.marginals[j], normal.cdf(gj));
                }
            }
        }
    }

    /// Gaussian conditional of the `redraw` coordinates given the others.
    fn conditional(&self, redraw: &[usize]) -> Conditional {
        let fixed: Vec<usize> = (0..self.dim()).filter(|j| !redraw.contains(j)).collect();
        let s_rr = DMatrix::from_fn(redraw.len(), redraw.len(), |a, b| self.cov[(redraw[a], redraw[b])]);
        if fixed.is_empty() {
            return Conditional { redraw: redraw.to_vec(), fixed, gain: DMatrix::zeros(redraw.len(), 0), root: psd_sqrt(&s_rr) };
        }
        let s_rf = DMatrix::from_fn(redraw.len(), fixed.len(), |a, b| self.cov[(redraw[a], fixed[b])]);
        let s_ff = DMatrix::from_fn(fixed.len(), fixed.len(), |a, b| self.cov[(fixed[a], fixed[b])]);
        let gain = &s_rf * psd_pinv(&s_ff);
        let cond = &s_rr - &gain * s_rf.transpose();
        Conditional { redraw: redraw.to_vec(), fixed, gain, root: psd_sqrt(&cond) }
    }
}

struct Conditional {
    redraw: Vec<usize>,
    fixed: Vec<usize>,
    gain: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl Conditional {
    /// Replaces the redrawn coordinates of latent `g` in place; `e` is a
    /// standard normal vector of full dimension, of which the redrawn
    /// coordinates are used.
    fn apply(&self, mean: &[f64], g: &mut [f64], e: &[f64]) {
        let dev_f: Vec<f64> = self.fixed.iter().map(|&f| g[f] - mean[f]).collect();
        let noise: Vec<f64> = self.redraw.iter().map(|&r| e[r]).collect();
        for (a, &r) in self.redraw.iter().enumerate() {
            let mut v = mean[r];
            for (b, d) in dev_f.iter().enumerate() {
                v += self.gain[(a, b)] * d;
            }
            for (b, z) in noise.iter().enumerate() {
                v += self.root[(a, b)] * z;
            }
            g[r] = v;
        }
    }
}

fn column_moments(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = m.shape();
    let mean: Vec<f64> = (0..d).map(|j| m.column(j).sum() / n as f64).collect();
    let c = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    (mean, c.tr_mul(&c) / (n - 1) as f64)
}

fn average_ranks(col: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut ranks = vec![0.0; col.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && col[idx[j + 1]] == col[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Linear interpolation between order statistics at probability `u`.
fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let pos = u.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l > 1e-12 * max { 1.0 / l } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Common draws shared by every subset estimate.
struct Design {
    latent: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    base: Vec<f64>,
    mean_h: f64,
    var_h: f64,
}

fn design<H: Fn(&[f64]) -> f64>(h: &H, sampler: &InputSampler, n: usize, seed: u64) -> Result<Design> {
    let d = sampler.dim();
    let root = psd_sqrt(&sampler.cov);
    let mut base_rng = rng::stream(seed, "pme/base", 0);
    let mut noise_rng = rng::stream(seed, "pme/redraw", 0);
    let mut latent = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    let mut w = vec![0.0; d];
    for _ in 0..n {
        let e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut base_rng)).collect();
        let g: Vec<f64> = (0..d).map(|a| sampler.mean[a] + (0..d).map(|b| root[(a, b)] * e[b]).sum::<f64>()).collect();
        sampler.to_input(&g, &mut w);
        base.push(h(&w));
        latent.push(g);
        noise.push((0..d).map(|_| StandardNormal.sample(&mut noise_rng)).collect());
    }
    let mean_h = base.iter().sum::<f64>() / n as f64;
    let var_h = base.iter().map(|v| (v - mean_h) * (v - mean_h)).sum::<f64>() / (n - 1) as f64;
    if !(var_h > 1e-300) || !var_h.is_finite() {
        return Err(Error::ZeroOutputVariance);
    }
    Ok(Design { latent, noise, base, mean_h, var_h })
}

/// `E[Var(h | W_{-R})]` and its standard error, by redrawing the set `R`.
fn jansen<H: Fn(&[f64]) -> f64>(h: &H, sampler: &InputSampler, des: &Design, redraw: &[usize]) -> (f64, f64) {
    if redraw.is_empty() {
        return (0.0, 0.0);
    }
    let cond = sampler.conditional(redraw);
    let n = des.base.len();
    let mut g = vec![0.0; sampler.dim()];
    let mut w = vec![0.0; sampler.dim()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n {
        g.copy_from_slice(&des.latent[i]);
        cond.apply(&sampler.mean, &mut g, &des.noise[i]);
        sampler.to_input(&g, &mut w);
        let diff = des.base[i] - h(&w);
        let t = 0.5 * diff * diff;
        sum += t;
        sum_sq += t * t;
    }
    let m = sum / n as f64;
    let var = (sum_sq / n as f64 - m * m).max(0.0);
    (m, (var / n as f64).sqrt())
}

fn members(mask: usize, d: usize) -> Vec<usize> {
    (0..d).filter(|j| mask & (1 << j) != 0).collect()
}

/// `1 - Var(E[h | W_A]) / Var(h)`, i.e. the share of variance still unexplained
/// when only `W_A` is known. Clamped to `[0, 1]`; exactly 1 for `A = {}` and 0
/// when `A` holds every input.
pub fn total_sobol<H: Fn(&[f64]) -> f64>(h: &H, sampler: &InputSampler, a: &[usize], n: usize, seed: u64) -> Result<f64> {
    let d = sampler.dim();
    if a.iter().any(|&j| j >= d) {
        return Err(Error::DimensionMismatch("subset index beyond input dimension".into()));
    }
    let des = design(h, sampler, n, seed)?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let redraw: Vec<usize> = (0..d).filter(|j| !a.contains(j)).collect();
    Ok((jansen(h, sampler, &des, &redraw).0 / des.var_h).clamp(0.0, 1.0))
}

/// Normalized PME (summing to 1) from coalition indices `v`, indexed by the
/// bitmask of the coalition, with `v[0] = 0` and `v[full] = 1`. Returns the
/// shares and whether the zero-coalition floor was hit.
pub fn pme_from_total_indices(v: &[f64], d: usize) -> Result<(Vec<f64>, bool)> {
    if d == 0 || d > MAX_INPUTS {
        return Err(Error::TooManyInputs(d));
    }
    if v.len() != 1 << d {
        return Err(Error::DimensionMismatch(format!("{} coalition values for {d} inputs", v.len())));
    }
    let full = (1usize << d) - 1;
    let mut floored = false;
    let log_w: Vec<f64> = (0..=full)
        .map(|m| {
            if m != 0 && v[m] < WEIGHT_FLOOR {
                floored = true;
            }
            v[m].max(WEIGHT_FLOOR).ln()
        })
        .collect();

    // Depth-first walk over orderings: prefix mask and -sum of log v so far.
    fn walk(mask: usize, neg_log: f64, full: usize, d: usize, log_w: &[f64], visit: &mut dyn FnMut(usize, f64)) {
        if mask == full {
            visit(mask, neg_log);
            return;
        }
        for j in 0..d {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                walk(next, neg_log - log_w[next], full, d, log_w, visit);
            }
        }
    }
    let mut max_log = f64::NEG_INFINITY;
    walk(0, 0.0, full, d, &log_w, &mut |_, l| max_log = max_log.max(l));

    // The marginal contributions need the ordering, so walk again carrying the
    // per-input contributions along the path.
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    let mut contrib = vec![0.0; d];
    fn walk2(
        mask: usize,
        neg_log: f64,
        full: usize,
        d: usize,
        v: &[f64],
        log_w: &[f64],
        max_log: f64,
        contrib: &mut [f64],
        acc: &mut [f64],
        total: &mut f64,
    ) {
        if mask == full {
            let w = (neg_log - max_log).exp();
            *total += w;
            for (a, c) in acc.iter_mut().zip(contrib.iter()) {
                *a += w * c;
            }
            return;
        }
        for j in 0..d {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                contrib[j] = v[next] - v[mask];
                walk2(next, neg_log - log_w[next], full, d, v, log_w, max_log, contrib, acc, total);
            }
        }
    }
    walk2(0, 0.0, full, d, v, &log_w, max_log, &mut contrib, &mut acc, &mut total);
    Ok((acc.into_iter().map(|a| a / total).collect(), floored))
}

/// Deterministic part of a PME decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmeIndices {
    /// Absolute PME per input, summing to `var_h`.
    pub delta: Vec<f64>,
    pub var_h: f64,
    pub mean_h: f64,
    /// Coalition indices by bitmask.
    pub coalition_index: Vec<f64>,
    /// Largest Monte-Carlo standard error of a coalition index.
    pub max_stderr: f64,
    /// Some coalition index was below the weight floor.
    pub floor_hit: bool,
    /// Sum of the clamped shares before rescaling.
    pub raw_sum: f64,
}

/// PME of `h` under `sampler`, from `n` base draws.
pub fn pme_indices<H: Fn(&[f64]) -> f64 + Sync>(h: &H, sampler: &InputSampler, n: usize, seed: u64) -> Result<PmeIndices> {
    let d = sampler.dim();
    if d > MAX_INPUTS {
        return Err(Error::TooManyInputs(d));
    }
    if d == 0 {
        return Err(Error::EmptyInput("no model inputs to decompose".into()));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("at least two samples are needed".into()));
    }
    let des = design(h, sampler, n, seed)?;
    let full = (1usize << d) - 1;
    let masks: Vec<usize> = (1..full).collect();
    let est = |&m: &usize| jansen(h, sampler, &des, &members(m, d));
    #[cfg(feature = "parallel")]
    let inner: Vec<(f64, f64)> = masks.par_iter().map(est).collect();
    #[cfg(not(feature = "parallel"))]
    let inner: Vec<(f64, f64)> = masks.iter().map(est).collect();

    let mut v = vec![0.0; full + 1];
    v[full] = 1.0;
    let mut max_stderr = 0.0_f64;
    for (&m, &(e, se)) in masks.iter().zip(&inner) {
        v[m] = (e / des.var_h).clamp(0.0, 1.0);
        max_stderr = max_stderr.max(se / des.var_h);
    }
    let (shares, floor_hit) = pme_from_total_indices(&v, d)?;
    let clamped: Vec<f64> = shares.iter().map(|s| s.max(0.0)).collect();
    let raw_sum: f64 = clamped.iter().sum();
    let delta = if raw_sum > 0.0 {
        clamped.iter().map(|s| s / raw_sum * des.var_h).collect()
    } else {
        vec![des.var_h / d as f64; d]
    };
    Ok(PmeIndices { delta, var_h: des.var_h, mean_h: des.mean_h, coalition_index: v, max_stderr, floor_hit, raw_sum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmeShare {
    pub variable: String,
    pub delta: f64,
    /// Percent of the total variance.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmeReport {
    pub target: String,
    pub inputs: Vec<PmeShare>,
    /// Percent of the total variance due to the model error `theta^2`.
    pub model_error_share: f64,
    /// `Var(h) + theta^2`.
    pub total_variance: f64,
    pub var_h: f64,
    pub theta_sq: f64,
    /// Monte-Carlo tolerance on the shares, in percentage points.
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub floor_hit: bool,
    pub warnings: Vec<String>,
}

/// PME of a fitted model's inputs plus the model-error share; the sampler is
/// fitted on the model's input columns of `train`.
pub fn decompose_model(model: &FittedModel, train: &CalibrationDataset, kind: SamplerKind, n: usize, seed: u64) -> Result<PmeReport> {
    let inputs = model.basis.inputs_of(train)?;
    let sampler = InputSampler::fit(kind, &inputs)?;
    let h = |w: &[f64]| model.predict_inputs(w);
    let idx = pme_indices(&h, &sampler, n, seed)?;
    let theta_sq = model.theta_hat * model.theta_hat;
    let total = idx.var_h + theta_sq;
    let mut warnings = Vec::new();
    if idx.floor_hit {
        warnings.push("a coalition had a zero total index; its weight was floored".into());
    }
    let shares = model
        .basis
        .labels
        .iter()
        .zip(&idx.delta)
        .map(|(l, &d)| PmeShare { variable: l.clone(), delta: d, share: 100.0 * d / total })
        .collect();
    Ok(PmeReport {
        target: model.target.clone(),
        inputs: shares,
        model_error_share: 100.0 * theta_sq / total,
        total_variance: total,
        var_h: idx.var_h,
        theta_sq,
        tolerance: 300.0 * idx.max_stderr * idx.var_h / total,
        samples: n,
        seed,
        sampler: kind,
        floor_hit: idx.floor_hit,
        warnings,
    })
}
