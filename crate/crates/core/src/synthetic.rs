//! Synthetic benchmark: one target `x`, five interferents `z1..z5` (only the
//! first three act on the sensor) and one hidden variable `u`, jointly
//! Gaussian with a structured covariance.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Signs of `(x, z1, .., z5)` in the correlation pattern.
const SIGNS: [f64; 6] = [1.0, 1.0, -1.0, 1.0, 1.0, -1.0];

/// Draws with `x` at or below this value are rejected to keep `log(x + 4)` finite.
pub const X_FLOOR: f64 = -3.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub rho: f64,
    #[serde(default)]
    pub rho_u: f64,
    #[serde(default)]
    pub alpha_u: f64,
    /// Noise standard deviation as a fraction of each variable's marginal std.
    pub sigma_mes: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(0.0..1.0).contains(&self.rho) || !(0.0..1.0).contains(&self.rho_u) {
            return Err(Error::InvalidConfig("rho and rho_u must lie in [0, 1)".into()));
        }
        if !(self.alpha_u >= 0.0) || !(self.sigma_mes >= 0.0) {
            return Err(Error::InvalidConfig("alpha_u and sigma_mes must be non-negative".into()));
        }
        build_covariance(self.rho, self.rho_u).map(|_| ())
    }
}

/// Covariance of `(x, z1, .., z5, u)`: unit diagonal, `s_i s_j rho` inside the
/// `(x, z)` block and `rho_u` between `u` and everything else.
///
/// Fails with [`Error::NotPositiveDefinite`] when the matrix has no Cholesky
/// factor.
pub fn build_covariance(rho: f64, rho_u: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) || !(0.0..1.0).contains(&rho_u) {
        return Err(Error::InvalidConfig("rho and rho_u must lie in [0, 1)".into()));
    }
    let c = DMatrix::from_fn(7, 7, |i, j| {
        if i == j {
            1.0
        } else if i == 6 || j == 6 {
            rho_u
        } else {
            SIGNS[i] * SIGNS[j] * rho
        }
    });
    if c.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(c)
}

fn bump(t: f64) -> f64 {
    (t / 2.0).atan() * (1.0 + 0.1 * t / 2.0)
}

/// Sensor response of the benchmark.
pub fn response(x: f64, z: &[f64; 5], u: f64, alpha_u: f64) -> f64 {
    1.5 * (x + 4.0).ln()
        + bump(z[0])
        + bump(z[1])
        + 0.1 * bump(z[2])
        + 3.0 * ((z[0] + z[2]) / 6.0).cos()
        + 2.0 * ((x + z[1]) / 6.0).cos()
        + alpha_u * u
}

pub fn z_names() -> Vec<String> {
    (1..=5).map(|i| format!("z{i}")).collect()
}

/// Draws `(clean, noisy)` datasets. The hidden variable is never exposed.
/// `noisy` adds independent Gaussian noise with standard deviation
/// `sigma_mes` times the marginal std of each column (1 for `x` and `z`, the
/// empirical std of the clean draw for `y`).
pub fn simulate(config: &SyntheticConfig) -> Result<(CalibrationDataset, CalibrationDataset)> {
    config.validate()?;
    let cov = build_covariance(config.rho, config.rho_u)?;
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let n = config.n;

    let mut draw_rng = rng::stream(config.seed, "synthetic/draw", 0);
    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, 5);
    let mut y = DMatrix::zeros(n, 1);
    for i in 0..n {
        let w = loop {
            let e = DVector::from_fn(7, |_, _| StandardNormal.sample(&mut draw_rng));
            let w = &l * e;
            if w[0] > X_FLOOR {
                break w;
            }
        };
        x[(i, 0)] = w[0];
        let zi = [w[1], w[2], w[3], w[4], w[5]];
        for (j, v) in zi.iter().enumerate() {
            z[(i, j)] = *v;
        }
        y[(i, 0)] = response(w[0], &zi, w[6], config.alpha_u);
    }
    let clean = CalibrationDataset::new(vec!["x".into()], z_names(), vec!["y".into()], x, z, y, None)?;

    let mut noisy = clean.clone();
    if config.sigma_mes > 0.0 {
        let y_std = std_dev(clean.y.column(0).iter().copied());
        let mut noise_rng = rng::stream(config.seed, "synthetic/noise", 0);
        let mut eps = || -> f64 { StandardNormal.sample(&mut noise_rng) };
        for i in 0..n {
            noisy.x[(i, 0)] += config.sigma_mes * eps();
            for j in 0..5 {
                noisy.z[(i, j)] += config.sigma_mes * eps();
            }
            noisy.y[(i, 0)] += config.sigma_mes * y_std * eps();
        }
    }
    Ok((clean, noisy))
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
