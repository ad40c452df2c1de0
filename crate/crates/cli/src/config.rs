//! Run configuration: JSON file, `CALIB_*` environment overrides, and the
//! provenance hash.

use std::path::Path;

use anyhow::{Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use sensorsel_core::dataset::{Role, SplitSpec};
use sensorsel_core::inversion::{GridSpec, PriorKind};
use sensorsel_core::pme::{SamplerKind, DEFAULT_SAMPLES};
use sensorsel_core::resolution::ResolutionConfig;
use sensorsel_core::Error;

/// Parameters of the `simulate` command; the seed comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub rho: f64,
    pub rho_u: f64,
    pub alpha_u: f64,
    pub sigma_mes: f64,
    /// Correlation of the test set; defaults to `rho`.
    pub rho_test: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n_train: 200, n_test: 200, rho: 0.8, rho_u: 0.0, alpha_u: 0.0, sigma_mes: 0.05, rho_test: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV column roles, in the order the columns are grouped.
    pub role_map: IndexMap<String, Role>,
    pub p: u32,
    pub inner_b: usize,
    pub outer_m: usize,
    pub seed: u64,
    /// Variables present in every model; `None` means every target.
    pub always_include: Option<Vec<String>>,
    /// Input-noise standard deviation per target label (0 when absent).
    pub sigma_x: IndexMap<String, f64>,
    pub grid: GridSpec,
    pub prior: PriorKind,
    pub sampler: SamplerKind,
    pub pme_samples: usize,
    pub resolution: ResolutionConfig,
    /// Train/test split applied by `select` before fitting.
    pub split: Option<SplitSpec>,
    pub simulate: SimulateConfig,
    /// Write every scored candidate of the plain sweep to `candidates.json`.
    pub keep_log: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut role_map = IndexMap::new();
        role_map.insert("x".to_string(), Role::X);
        for i in 1..=5 {
            role_map.insert(format!("z{i}"), Role::Z);
        }
        role_map.insert("y".to_string(), Role::Y);
        RunConfig {
            role_map,
            p: 3,
            inner_b: 200,
            outer_m: 100,
            seed: 0,
            always_include: None,
            sigma_x: IndexMap::new(),
            grid: GridSpec::default(),
            prior: PriorKind::ConditionalKde,
            sampler: SamplerKind::GaussianCopulaEmpirical,
            pme_samples: DEFAULT_SAMPLES,
            resolution: ResolutionConfig::default(),
            split: None,
            simulate: SimulateConfig::default(),
            keep_log: false,
        }
    }
}

/// Top-level keys that `CALIB_<KEY>` environment variables may override.
/// The command-line flags have their own variables.
const ENV_KEYS: [&str; 9] = ["p", "inner_b", "outer_m", "pme_samples", "prior", "sampler", "keep_log", "always_include", "sigma_x"];

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies environment overrides
    /// from `env`, and validates.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        let obj = value.as_object_mut().ok_or_else(|| Error::InvalidConfig("config must be a JSON object".into()))?;
        for (k, v) in env {
            let Some(key) = k.strip_prefix("CALIB_").map(str::to_ascii_lowercase) else { continue };
            if ENV_KEYS.contains(&key.as_str()) {
                // Bare words such as `flat` are taken as strings.
                let parsed = serde_json::from_str(&v).unwrap_or(Value::String(v));
                obj.insert(key, parsed);
            }
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.p < 1 {
            return bad("p must be at least 1");
        }
        if self.inner_b < 2 {
            return bad("inner_b must be at least 2");
        }
        if self.pme_samples < 2 {
            return bad("pme_samples must be at least 2");
        }
        if !self.role_map.values().any(|r| *r == Role::X) || !self.role_map.values().any(|r| *r == Role::Y) {
            return bad("role_map needs at least one x and one y column");
        }
        if self.sigma_x.values().any(|s| !(*s >= 0.0)) {
            return bad("sigma_x entries must be non-negative");
        }
        for label in self.sigma_x.keys() {
            if self.role_map.get(label) != Some(&Role::X) {
                return Err(Error::InvalidConfig(format!("sigma_x names `{label}`, which is not an x column")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn sigma_for(&self, labels: &[String]) -> Vec<f64> {
        labels.iter().map(|l| self.sigma_x.get(l).copied().unwrap_or(0.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_the_benchmark() {
        let c = RunConfig::load(None, []).unwrap();
        assert_eq!((c.p, c.inner_b, c.outer_m), (3, 200, 100));
        assert_eq!(c.role_map.len(), 7);
    }

    #[test]
    fn environment_overrides_known_keys_only() {
        let c = RunConfig::load(None, env(&[("CALIB_OUTER_M", "7"), ("CALIB_PRIOR", "flat"), ("CALIB_OTHER", "1"), ("HOME", "/")])).unwrap();
        assert_eq!(c.outer_m, 7);
        assert_eq!(c.prior, PriorKind::Flat);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"outer_mm": 3}"#).unwrap();
        let err = RunConfig::load(Some(&p), []).unwrap_err();
        assert!(err.downcast_ref::<Error>().is_some());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
