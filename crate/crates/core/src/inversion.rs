//! Posterior of the targets given sensor readings.
//!
//! The calibrated outputs are stacked as `y = F(x, z) beta + Theta xi`, with
//! `F` block-diagonal in the per-output feature rows. Linearizing around the
//! bootstrap mean gives a Gaussian likelihood with
//!
//! ```text
//! m(x) = F E[beta]
//! C(x) = diag(E[theta^2]) + F Cov(beta) F^T
//!        + sum_j sigma_j^2 dF/dx_j (Cov(beta) + E[beta] E[beta]^T) dF/dx_j^T
//! ```
//!
//! where `sigma_j` is the measurement noise on target `j`. The posterior is
//! this likelihood times a prior on `x` given `z`, tabulated on a grid.

use nalgebra::{DMatrix, DVector};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::glr::FittedModel;
use crate::uncertainty::BootstrapEnsemble;

pub const COVARIANCE_JITTER: f64 = 1e-12;

/// Calibrated outputs ready for inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub models: Vec<FittedModel>,
    pub x_labels: Vec<String>,
    /// Union of the interferents used by any output, in first-seen order.
    pub z_labels: Vec<String>,
    /// Start of each output's block in the stacked coefficient vector.
    pub offsets: Vec<usize>,
    pub mean_beta: Vec<f64>,
    pub cov_beta: DMatrix<f64>,
    pub mean_theta_sq: Vec<f64>,
    /// Measurement-noise standard deviation of each target.
    pub sigma_x: Vec<f64>,
    /// Per-output position of each basis input in `(x_labels, z_labels)`.
    input_map: Vec<Vec<usize>>,
}

impl JointModel {
    /// Stacks per-output models and their bootstrap ensembles. Ensembles must
    /// come from the same resamples so that cross-output covariances are
    /// meaningful.
    pub fn new(models: Vec<FittedModel>, ensembles: &[BootstrapEnsemble], sigma_x: Vec<f64>) -> Result<Self> {
        if models.is_empty() || models.len() != ensembles.len() {
            return Err(Error::DimensionMismatch("one ensemble per model is required".into()));
        }
        let d_x = models[0].basis.d_x;
        if d_x == 0 {
            return Err(Error::InvalidConfig("inversion needs the targets among the model inputs".into()));
        }
        let x_labels: Vec<String> = models[0].basis.labels[..d_x].to_vec();
        if sigma_x.len() != d_x || sigma_x.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig(format!("expected {d_x} non-negative target noise levels")));
        }
        let mut z_labels: Vec<String> = Vec::new();
        for m in &models {
            if m.basis.d_x != d_x || m.basis.labels[..d_x] != x_labels[..] {
                return Err(Error::DimensionMismatch(format!("output {} uses different targets", m.target)));
            }
            for l in &m.basis.labels[d_x..] {
                if !z_labels.contains(l) {
                    z_labels.push(l.clone());
                }
            }
        }
        let seeds = &ensembles[0].resample_seeds;
        if ensembles.iter().any(|e| &e.resample_seeds != seeds) {
            return Err(Error::InvalidConfig("bootstrap ensembles were drawn from different resamples".into()));
        }
        let mut offsets = Vec::with_capacity(models.len());
        let mut total = 0;
        for (m, e) in models.iter().zip(ensembles) {
            if e.m_beta.len() != m.basis.k() {
                return Err(Error::DimensionMismatch(format!("ensemble of {} has the wrong size", m.target)));
            }
            offsets.push(total);
            total += m.basis.k();
        }
        let b = seeds.len();
        let stacked = DMatrix::from_fn(b, total, |r, c| {
            let o = offsets.iter().rposition(|&o| o <= c).unwrap();
            ensembles[o].betas[r][c - offsets[o]]
        });
        let mean_beta: Vec<f64> = (0..total).map(|c| stacked.column(c).mean()).collect();
        let centered = DMatrix::from_fn(b, total, |r, c| stacked[(r, c)] - mean_beta[c]);
        let cov = centered.tr_mul(&centered) / (b - 1) as f64;
        let cov_beta = (&cov + cov.transpose()) * 0.5;
        let input_map = models
            .iter()
            .map(|m| {
                (0..d_x)
                    .chain(m.basis.labels[d_x..].iter().map(|l| d_x + z_labels.iter().position(|z| z == l).unwrap()))
                    .collect()
            })
            .collect();
        Ok(JointModel {
            mean_theta_sq: ensembles.iter().map(|e| e.mean_theta_sq).collect(),
            models,
            x_labels,
            z_labels,
            offsets,
            mean_beta,
            cov_beta,
            sigma_x,
            input_map,
        })
    }

    pub fn d_x(&self) -> usize {
        self.x_labels.len()
    }

    pub fn d_y(&self) -> usize {
        self.models.len()
    }

    fn total_k(&self) -> usize {
        self.mean_beta.len()
    }

    fn inputs_for(&self, out: usize, x: &[f64], z: &[f64]) -> Vec<f64> {
        self.input_map[out].iter().map(|&i| if i < x.len() { x[i] } else { z[i - x.len()] }).collect()
    }

    /// Stacked feature matrix `F` (`d_y x K`).
    pub fn features(&self, x: &[f64], z: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.d_y(), self.total_k());
        for (o, m) in self.models.iter().enumerate() {
            for (t, v) in m.basis.evaluate_inputs(&self.inputs_for(o, x, z)).into_iter().enumerate() {
                f[(o, self.offsets[o] + t)] = v;
            }
        }
        f
    }

    /// `dF/dx_j`.
    pub fn feature_derivative(&self, j: usize, x: &[f64], z: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.d_y(), self.total_k());
        for (o, m) in self.models.iter().enumerate() {
            for (t, v) in m.basis.derivative_inputs(j, &self.inputs_for(o, x, z)).into_iter().enumerate() {
                f[(o, self.offsets[o] + t)] = v;
            }
        }
        f
    }
}

/// Mean and covariance of the readings at target value `x`; `z` follows
/// `jm.z_labels`.
pub fn posterior_moments(jm: &JointModel, x: &[f64], z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.len() != jm.d_x() || z.len() != jm.z_labels.len() {
        return Err(Error::DimensionMismatch("target / interferent vector sizes".into()));
    }
    if x.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("non-finite inversion input".into()));
    }
    let e = DVector::from_column_slice(&jm.mean_beta);
    let f = jm.features(x, z);
    let m = &f * &e;
    let mut c = DMatrix::from_diagonal(&DVector::from_column_slice(&jm.mean_theta_sq));
    c += &f * &jm.cov_beta * f.transpose();
    if jm.sigma_x.iter().any(|s| *s > 0.0) {
        let second = &jm.cov_beta + &e * e.transpose();
        for (j, s) in jm.sigma_x.iter().enumerate() {
            if *s > 0.0 {
                let d = jm.feature_derivative(j, x, z);
                c += (&d * &second * d.transpose()) * (s * s);
            }
        }
    }
    Ok((m, (&c + c.transpose()) * 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    ConditionalKde,
    Flat,
}

/// Prior density of the targets given the interferents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPrior {
    pub kind: PriorKind,
    pub d_x: usize,
    /// Training rows `(x, z)`, one per kernel.
    pub points: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|a| (a - max).exp()).sum::<f64>().ln()
}

impl ConditionalPrior {
    pub fn flat(d_x: usize) -> Self {
        ConditionalPrior { kind: PriorKind::Flat, d_x, points: Vec::new(), bandwidth: Vec::new() }
    }

    /// Per-kernel log weights `log K_z(z - z_i)` for one conditioning value.
    pub fn z_weights(&self, z: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                z.iter()
                    .enumerate()
                    .map(|(a, &v)| {
                        let h = self.bandwidth[self.d_x + a];
                        let u = (v - p[self.d_x + a]) / h;
                        -0.5 * u * u
                    })
                    .sum()
            })
            .collect()
    }

    /// `log f(x | z)` given the weights from [`Self::z_weights`].
    pub fn log_density_weighted(&self, x: &[f64], weights: &[f64]) -> f64 {
        if self.kind == PriorKind::Flat {
            return 0.0;
        }
        let norm: f64 = (0..self.d_x).map(|a| self.bandwidth[a].ln() + LN_SQRT_2PI).sum();
        let joint = log_sum_exp(self.points.iter().zip(weights).map(|(p, w)| {
            w + x
                .iter()
                .enumerate()
                .map(|(a, &v)| {
                    let u = (v - p[a]) / self.bandwidth[a];
                    -0.5 * u * u
                })
                .sum::<f64>()
        }));
        joint - log_sum_exp(weights.iter().copied()) - norm
    }

    pub fn log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        self.log_density_weighted(x, &self.z_weights(z))
    }
}

/// Gaussian product-kernel KDE over the `(x, z)` rows of `train`, with
/// `z_labels` naming the conditioning interferents.
pub fn fit_prior(train: &CalibrationDataset, z_labels: &[String], kind: PriorKind) -> Result<ConditionalPrior> {
    let d_x = train.d_x();
    if kind == PriorKind::Flat {
        return Ok(ConditionalPrior::flat(d_x));
    }
    let n = train.n();
    if n < 10 {
        return Err(Error::DegeneratePrior(format!("{n} rows are too few for a density estimate")));
    }
    let z_idx: Vec<usize> = z_labels
        .iter()
        .map(|l| train.z_index(l).ok_or_else(|| Error::MissingColumn(l.clone())))
        .collect::<Result<_>>()?;
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| train.x_row(i).into_iter().chain(z_idx.iter().map(|&j| train.z[(i, j)])).collect())
        .collect();
    let dim = d_x + z_idx.len();
    let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
    let bandwidth = (0..dim)
        .map(|a| {
            let mean = points.iter().map(|p| p[a]).sum::<f64>() / n as f64;
            let sd = (points.iter().map(|p| (p[a] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                let name = if a < d_x { &train.x_names[a] } else { &z_labels[a - d_x] };
                return Err(Error::DegeneratePrior(format!("column {name} is constant")));
            }
            Ok(sd * factor)
        })
        .collect::<Result<_>>()?;
    Ok(ConditionalPrior { kind, d_x, points, bandwidth })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    /// Fraction of the training range added on each side.
    pub extension: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: 400, extension: 0.5 }
    }
}

impl GridSpec {
    /// Axes spanning the training range of each target.
    pub fn axes(&self, train: &CalibrationDataset) -> Result<Vec<Axis>> {
        let ranges: Vec<(f64, f64)> = (0..train.d_x())
            .map(|j| {
                let col = train.x.column(j);
                (col.min(), col.max())
            })
            .collect();
        self.axes_from_ranges(&ranges, &train.x_names)
    }

    /// Axes around explicit `(min, max)` ranges, one per target in `labels`.
    pub fn axes_from_ranges(&self, ranges: &[(f64, f64)], labels: &[String]) -> Result<Vec<Axis>> {
        if self.points < 3 {
            return Err(Error::InvalidConfig("a grid needs at least three points per axis".into()));
        }
        if !(self.extension >= 0.0) {
            return Err(Error::InvalidConfig("grid extension must be non-negative".into()));
        }
        ranges
            .iter()
            .zip(labels)
            .map(|(&(lo, hi), label)| {
                if !(hi > lo) {
                    return Err(Error::DegeneratePrior(format!("target {label} has no spread")));
                }
                let ext = self.extension * (hi - lo);
                Ok(Axis { min: lo - ext, max: hi + ext, count: self.points })
            })
            .collect()
    }
}

/// Normalized log posterior on a 1-D or 2-D grid (row-major, first axis slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub axes: Vec<Axis>,
    pub log_density: Vec<f64>,
    /// Log of the trapezoidal integral of the unnormalized density.
    pub log_normalizer: f64,
}

fn trapezoid_weights(axis: &Axis) -> Vec<f64> {
    let h = axis.step();
    (0..axis.count).map(|i| if i == 0 || i + 1 == axis.count { 0.5 * h } else { h }).collect()
}

impl PosteriorGrid {
    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    fn coords(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (o, a) in out.iter_mut().zip(&self.axes).rev() {
            *o = flat % a.count;
            flat /= a.count;
        }
        out
    }

    /// Trapezoidal integral of the density; 1 up to rounding.
    pub fn integral(&self) -> f64 {
        let w: Vec<Vec<f64>> = self.axes.iter().map(trapezoid_weights).collect();
        (0..self.log_density.len())
            .map(|f| {
                let c = self.coords(f);
                c.iter().enumerate().map(|(a, &i)| w[a][i]).product::<f64>() * self.log_density[f].exp()
            })
            .sum()
    }

    /// Marginal density along `axis` at each of its grid nodes.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let w: Vec<Vec<f64>> = self.axes.iter().map(trapezoid_weights).collect();
        let mut out = vec![0.0; self.axes[axis].count];
        for f in 0..self.log_density.len() {
            let c = self.coords(f);
            let wt: f64 = c.iter().enumerate().filter(|(a, _)| *a != axis).map(|(a, &i)| w[a][i]).product();
            out[c[axis]] += wt * self.log_density[f].exp();
        }
        out
    }

    /// Quantile of the marginal along `axis`, by linear interpolation of the
    /// trapezoidal CDF.
    pub fn quantile(&self, axis: usize, q: f64) -> f64 {
        let ax = self.axes[axis];
        let m = self.marginal(axis);
        let h = ax.step();
        let mut cdf = vec![0.0; m.len()];
        for i in 1..m.len() {
            cdf[i] = cdf[i - 1] + 0.5 * h * (m[i - 1] + m[i]);
        }
        let total = *cdf.last().unwrap();
        let target = q * total;
        for i in 1..m.len() {
            if cdf[i] >= target {
                let span = cdf[i] - cdf[i - 1];
                let t = if span > 0.0 { (target - cdf[i - 1]) / span } else { 0.0 };
                return ax.value(i - 1) + t * h;
            }
        }
        ax.max
    }
}

/// Result of one inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub map: Vec<f64>,
    /// 95% credibility interval per target.
    pub intervals: Vec<(f64, f64)>,
    pub grid: PosteriorGrid,
    pub warnings: Vec<String>,
}

/// Posterior for one reading `y` (ordered as `jm.models`) and interferent
/// vector `z` (ordered as `jm.z_labels`).
pub fn estimate(jm: &JointModel, prior: &ConditionalPrior, z: &[f64], y: &[f64], axes: &[Axis]) -> Result<Estimate> {
    let d_x = jm.d_x();
    if d_x > 2 || axes.len() != d_x {
        return Err(Error::InvalidConfig("grid inversion supports one or two targets".into()));
    }
    if y.len() != jm.d_y() {
        return Err(Error::DimensionMismatch(format!("{} readings for {} outputs", y.len(), jm.d_y())));
    }
    let weights = if prior.kind == PriorKind::Flat { Vec::new() } else { prior.z_weights(z) };
    let total: usize = axes.iter().map(|a| a.count).product();
    let mut logp = Vec::with_capacity(total);
    let yv = DVector::from_column_slice(y);
    let mut x = vec![0.0; d_x];
    for f in 0..total {
        let mut rem = f;
        for a in (0..d_x).rev() {
            x[a] = axes[a].value(rem % axes[a].count);
            rem /= axes[a].count;
        }
        let (m, mut c) = posterior_moments(jm, &x, z)?;
        for i in 0..c.nrows() {
            c[(i, i)] += COVARIANCE_JITTER;
        }
        let chol = c.cholesky().ok_or(Error::SingularCovariance)?;
        let r = &yv - m;
        let sol = chol.solve(&r);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut lp = -0.5 * r.dot(&sol) - 0.5 * logdet;
        if prior.kind != PriorKind::Flat {
            lp += prior.log_density_weighted(&x, &weights);
        }
        logp.push(lp);
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericalFailure("posterior vanishes on the whole grid".into()));
    }
    let mut grid = PosteriorGrid { axes: axes.to_vec(), log_density: logp.iter().map(|l| l - max).collect(), log_normalizer: 0.0 };
    let log_z = grid.integral().ln();
    grid.log_density.iter_mut().for_each(|l| *l -= log_z);
    grid.log_normalizer = max + log_z;

    let best = (0..total).fold(0, |b, f| if grid.log_density[f] > grid.log_density[b] { f } else { b });
    let c = grid.coords(best);
    let mut warnings = Vec::new();
    let map = (0..d_x)
        .map(|a| {
            let ax = axes[a];
            let i = c[a];
            if i == 0 || i + 1 == ax.count {
                warnings.push(format!("MAP of {} lies on the grid boundary; the grid is too coarse or too narrow", jm.x_labels[a]));
                return ax.value(i);
            }
            let mut lo = c.clone();
            lo[a] -= 1;
            let mut hi = c.clone();
            hi[a] += 1;
            let (l0, l1, l2) = (grid.log_density[grid.index(&lo)], grid.log_density[best], grid.log_density[grid.index(&hi)]);
            let curv = l0 - 2.0 * l1 + l2;
            let shift = if curv < 0.0 { (0.5 * (l0 - l2) / curv).clamp(-0.5, 0.5) } else { 0.0 };
            ax.value(i) + shift * ax.step()
        })
        .collect();
    let intervals = (0..d_x).map(|a| (grid.quantile(a, 0.025), grid.quantile(a, 0.975))).collect();
    Ok(Estimate { map, intervals, grid, warnings })
}

/// Inverts every row of `ds`, reading the outputs and interferents by label.
pub fn estimate_dataset(jm: &JointModel, prior: &ConditionalPrior, ds: &CalibrationDataset, axes: &[Axis]) -> Result<Vec<Estimate>> {
    let y_idx: Vec<usize> = jm
        .models
        .iter()
        .map(|m| ds.y_index(&m.target).ok_or_else(|| Error::MissingColumn(m.target.clone())))
        .collect::<Result<_>>()?;
    let z_idx: Vec<usize> = jm
        .z_labels
        .iter()
        .map(|l| ds.z_index(l).ok_or_else(|| Error::MissingColumn(l.clone())))
        .collect::<Result<_>>()?;
    let row = |i: usize| {
        let z: Vec<f64> = z_idx.iter().map(|&j| ds.z[(i, j)]).collect();
        let y: Vec<f64> = y_idx.iter().map(|&j| ds.y[(i, j)]).collect();
        estimate(jm, prior, &z, &y, axes)
    };
    #[cfg(feature = "parallel")]
    return (0..ds.n()).into_par_iter().map(row).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..ds.n()).map(row).collect();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub variable: String,
    pub r2: f64,
    pub mae: f64,
    pub interval_length_mean: f64,
    pub coverage_pct: f64,
    pub n: usize,
}

/// Metrics of target `j` over paired estimates and true values.
pub fn evaluate(variable: &str, predictions: &[f64], intervals: &[(f64, f64)], truth: &[f64]) -> Result<PredictionMetrics> {
    let n = truth.len();
    if n < 2 || predictions.len() != n || intervals.len() != n {
        return Err(Error::DimensionMismatch("metrics need at least two paired rows".into()));
    }
    let mean = truth.iter().sum::<f64>() / n as f64;
    let sst: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let sse: f64 = truth.iter().zip(predictions).map(|(t, p)| (t - p).powi(2)).sum();
    let inside = truth.iter().zip(intervals).filter(|&(t, &(lo, hi))| lo <= *t && *t <= hi).count();
    Ok(PredictionMetrics {
        variable: variable.to_string(),
        r2: 1.0 - sse / sst,
        mae: truth.iter().zip(predictions).map(|(t, p)| (t - p).abs()).sum::<f64>() / n as f64,
        interval_length_mean: intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n as f64,
        coverage_pct: 100.0 * inside as f64 / n as f64,
        n,
    })
}

/// Metrics for every target of a batch of estimates against `truth` (`n x d_x`).
pub fn evaluate_estimates(labels: &[String], estimates: &[Estimate], truth: &DMatrix<f64>) -> Result<Vec<PredictionMetrics>> {
    labels
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let pred: Vec<f64> = estimates.iter().map(|e| e.map[j]).collect();
            let iv: Vec<(f64, f64)> = estimates.iter().map(|e| e.intervals[j]).collect();
            let t: Vec<f64> = truth.column(j).iter().copied().collect();
            evaluate(l, &pred, &iv, &t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::full_basis;
    use crate::glr::fit;

    fn line(n: usize, slope: f64, noise: f64) -> CalibrationDataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64 * 4.0 - 2.0);
        let y = DMatrix::from_fn(n, 1, |i, _| 0.5 + slope * x[(i, 0)] + noise * ((i * 7919) % 13) as f64 / 13.0);
        CalibrationDataset::new(vec!["x".into()], vec![], vec!["y".into()], x, DMatrix::zeros(n, 0), y, None).unwrap()
    }

    fn exact_model(ds: &CalibrationDataset, theta_sq: f64) -> JointModel {
        let b = full_basis(ds, &[], 1).unwrap();
        let m = fit(ds, 0, &b).unwrap();
        let ens = BootstrapEnsemble::from_replicates(vec![m.beta_hat.clone(); 3], vec![theta_sq.sqrt(); 3], vec![1, 2, 3], 0).unwrap();
        JointModel::new(vec![m], &[ens], vec![0.0]).unwrap()
    }

    #[test]
    fn zero_noise_collapses_to_model_error() {
        let ds = line(50, 2.0, 0.0);
        let jm = exact_model(&ds, 0.04);
        let (_, c) = posterior_moments(&jm, &[0.3], &[]).unwrap();
        assert_eq!(c[(0, 0)], jm.mean_theta_sq[0]);
    }

    #[test]
    fn scalar_covariance_matches_hand_computation() {
        let ds = line(50, 2.0, 0.0);
        let b = full_basis(&ds, &[], 1).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        let betas = vec![vec![0.4, 1.1], vec![0.6, 1.3], vec![0.5, 0.9]];
        let ens = BootstrapEnsemble::from_replicates(betas, vec![0.1, 0.2, 0.3], vec![1, 2, 3], 0).unwrap();
        let sigma = 0.2;
        let jm = JointModel::new(vec![m], &[ens.clone()], vec![sigma]).unwrap();
        let x = 0.7;
        let (mu, s) = (b.norm_mean[1], b.norm_std[1]);
        let f = [1.0, (x - mu) / s];
        let cb = &ens.c_beta;
        let var_fb = f[0] * f[0] * cb[(0, 0)] + 2.0 * f[0] * f[1] * cb[(0, 1)] + f[1] * f[1] * cb[(1, 1)];
        let slope_second = cb[(1, 1)] + ens.m_beta[1] * ens.m_beta[1];
        let hand = ens.mean_theta_sq + var_fb + sigma * sigma * slope_second / (s * s);
        let (_, c) = posterior_moments(&jm, &[x], &[]).unwrap();
        assert!((c[(0, 0)] - hand).abs() < 1e-12 * hand);
    }

    #[test]
    fn feature_derivative_matches_finite_difference() {
        let ds = line(40, 1.0, 0.1);
        let b = full_basis(&ds, &[], 3).unwrap();
        let m = fit(&ds, 0, &b).unwrap();
        let ens = BootstrapEnsemble::from_replicates(vec![m.beta_hat.clone(); 2], vec![0.1; 2], vec![0, 1], 0).unwrap();
        let jm = JointModel::new(vec![m], &[ens], vec![0.1]).unwrap();
        let x = 0.37;
        let h = 1e-5;
        let d = jm.feature_derivative(0, &[x], &[]);
        let fd = (jm.features(&[x + h], &[]) - jm.features(&[x - h], &[])) / (2.0 * h);
        for t in 0..d.ncols() {
            assert!((d[(0, t)] - fd[(0, t)]).abs() <= 1e-6 * d[(0, t)].abs().max(1.0));
        }
    }

    #[test]
    fn flat_prior_map_is_algebraic_inverse() {
        let ds = line(60, 2.0, 0.0);
        let jm = exact_model(&ds, 0.01);
        let axes = GridSpec::default().axes(&ds).unwrap();
        let est = estimate(&jm, &ConditionalPrior::flat(1), &[], &[1.3], &axes).unwrap();
        assert!((est.map[0] - 0.4).abs() <= axes[0].step());
        assert!((est.grid.integral() - 1.0).abs() < 1e-9);
        let (lo, hi) = est.intervals[0];
        assert!(lo < est.map[0] && est.map[0] < hi);
    }

    #[test]
    fn sharp_prior_dominates() {
        let ds = line(60, 2.0, 0.0);
        let jm = exact_model(&ds, 1.0);
        let prior = ConditionalPrior { kind: PriorKind::ConditionalKde, d_x: 1, points: vec![vec![1.0]], bandwidth: vec![1e-2] };
        let axes = GridSpec { points: 2001, extension: 0.5 }.axes(&ds).unwrap();
        let est = estimate(&jm, &prior, &[], &[-3.0], &axes).unwrap();
        assert!((est.map[0] - 1.0).abs() < 0.01, "{:?}", est.map);
    }

    #[test]
    fn identical_points_make_a_degenerate_prior() {
        let x = DMatrix::from_element(20, 1, 1.0);
        let ds = CalibrationDataset::new(vec!["x".into()], vec![], vec!["y".into()], x.clone(), DMatrix::zeros(20, 0), x, None).unwrap();
        assert!(matches!(fit_prior(&ds, &[], PriorKind::ConditionalKde), Err(Error::DegeneratePrior(_))));
    }

    #[test]
    fn metric_definitions() {
        let truth = [1.0, 2.0, 3.0, 4.0];
        let perfect = evaluate("x", &truth, &[(0.0, 5.0); 4], &truth).unwrap();
        assert_eq!((perfect.r2, perfect.mae, perfect.coverage_pct), (1.0, 0.0, 100.0));
        let flat = evaluate("x", &[2.5; 4], &[(2.0, 3.0); 4], &truth).unwrap();
        assert_eq!(flat.r2, 0.0);
        assert_eq!(flat.coverage_pct, 50.0);
        assert_eq!(flat.interval_length_mean, 1.0);
    }
}
