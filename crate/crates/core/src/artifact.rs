//! Serialized calibration: everything inversion, PME and resolution need
//! without the training run.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glr::FittedModel;
use crate::inversion::{ConditionalPrior, JointModel};
use crate::uncertainty::BootstrapEnsemble;

/// Where an output came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// Hex digest of the canonical run configuration.
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance { tool_version: env!("CARGO_PKG_VERSION").to_string(), config_hash: config_hash.into() }
    }

    /// One-line form for comment headers.
    pub fn line(&self) -> String {
        format!("tool_version={} config_hash={}", self.tool_version, self.config_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputModel {
    pub model: FittedModel,
    pub ensemble: BootstrapEnsemble,
    /// Interferents retained by the selection.
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub provenance: Provenance,
    pub outputs: Vec<OutputModel>,
    /// Prior of the targets given the union of the selected interferents.
    pub prior: ConditionalPrior,
    /// Training range per target.
    pub x_range: Vec<(f64, f64)>,
    pub seed: u64,
}

impl ModelArtifact {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if a.outputs.is_empty() {
            return Err(Error::InvalidConfig("model artifact holds no outputs".into()));
        }
        Ok(a)
    }

    pub fn output(&self, target: &str) -> Option<&OutputModel> {
        self.outputs.iter().find(|o| o.model.target == target)
    }

    pub fn joint_model(&self, sigma_x: Vec<f64>) -> Result<JointModel> {
        let models = self.outputs.iter().map(|o| o.model.clone()).collect();
        let ens: Vec<BootstrapEnsemble> = self.outputs.iter().map(|o| o.ensemble.clone()).collect();
        JointModel::new(models, &ens, sigma_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::full_basis;
    use crate::dataset::CalibrationDataset;
    use crate::glr::fit;
    use nalgebra::DMatrix;

    #[test]
    fn round_trip() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y = DMatrix::from_fn(20, 1, |i, _| 2.0 * i as f64 + (i % 3) as f64);
        let ds = CalibrationDataset::new(vec!["x".into()], vec![], vec!["y".into()], x, DMatrix::zeros(20, 0), y, None).unwrap();
        let model = fit(&ds, 0, &full_basis(&ds, &[], 2).unwrap()).unwrap();
        let ensemble = BootstrapEnsemble::from_replicates(vec![model.beta_hat.clone(); 2], vec![0.1, 0.2], vec![5, 6], 0).unwrap();
        let a = ModelArtifact {
            provenance: Provenance::new("abc"),
            outputs: vec![OutputModel { model, ensemble, selected: vec![] }],
            prior: ConditionalPrior::flat(1),
            x_range: vec![(0.0, 19.0)],
            seed: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        a.save(&p).unwrap();
        assert_eq!(ModelArtifact::load(&p).unwrap(), a);
        assert!(a.joint_model(vec![0.0]).is_ok());
    }
}
