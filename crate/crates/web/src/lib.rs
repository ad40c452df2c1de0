//! Browser demo: draw the synthetic benchmark, select interferents, then
//! invert single test readings or decompose the calibrated model's variance.
//!
//! Every export returns a JSON string; SVG figures travel inside it.

use serde_json::json;
use wasm_bindgen::prelude::*;

use sensorsel_core::dataset::CalibrationDataset;
use sensorsel_core::glr::FittedModel;
use sensorsel_core::inversion::{estimate, fit_prior, Axis, ConditionalPrior, GridSpec, JointModel, PriorKind};
use sensorsel_core::pme::{decompose_model, SamplerKind};
use sensorsel_core::report::{curve_svg, pareto_svg, pie_svg};
use sensorsel_core::selection::{calibrate, sweep, SelectionConfig, SelectionProblem};
use sensorsel_core::synthetic::{simulate, SyntheticConfig};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

struct Calibrated {
    model: FittedModel,
    joint: JointModel,
    prior: ConditionalPrior,
    axes: Vec<Axis>,
}

#[wasm_bindgen]
pub struct Demo {
    train: CalibrationDataset,
    test: CalibrationDataset,
    test_clean: CalibrationDataset,
    sigma: f64,
    seed: u64,
    calibrated: Option<Calibrated>,
}

#[wasm_bindgen]
impl Demo {
    /// Draws train and test sets of `n` rows each.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, rho: f64, sigma: f64, seed: u32) -> Result<Demo, String> {
        let seed = u64::from(seed);
        let cfg = SyntheticConfig { n, rho, rho_u: 0.0, alpha_u: 0.0, sigma_mes: sigma, seed };
        let (_, train) = simulate(&cfg).map_err(err)?;
        let (test_clean, test) = simulate(&SyntheticConfig { seed: seed + 1000, ..cfg }).map_err(err)?;
        Ok(Demo { train, test, test_clean, sigma, seed, calibrated: None })
    }

    #[wasm_bindgen(js_name = testRows)]
    pub fn test_rows(&self) -> usize {
        self.test.n()
    }

    /// Exhaustive sweep over the interferents, then calibration of the chosen
    /// model. Returns the choice, its score and the Pareto-front SVG.
    pub fn select(&mut self, p: u32, inner_b: usize) -> Result<String, String> {
        let config = SelectionConfig { p, inner_b, seed: self.seed, keep_log: false };
        let problem = SelectionProblem::from_dataset(&self.train, None).map_err(err)?;
        let res = sweep(&problem, 0, &config).map_err(err)?;
        let basis = res.chosen_basis().map_err(err)?;
        let (model, ens) = calibrate(&self.train, 0, &basis, inner_b, self.seed).map_err(err)?;
        let joint = JointModel::new(vec![model.clone()], &[ens], vec![self.sigma]).map_err(err)?;
        let prior = fit_prior(&self.train, &joint.z_labels, PriorKind::ConditionalKde).map_err(err)?;
        let axes = GridSpec { points: 200, ..GridSpec::default() }.axes(&self.train).map_err(err)?;
        let out = json!({
            "chosen": res.chosen_labels(),
            "terms": basis.k(),
            "v": res.chosen.report.v,
            "bic": res.chosen.report.bic,
            "pareto": res.pareto.entries.iter().map(|e| json!({"size": e.size, "variables": e.best_labels, "v": e.mean_v})).collect::<Vec<_>>(),
            "svg": pareto_svg(&res, None),
        });
        self.calibrated = Some(Calibrated { model, joint, prior, axes });
        Ok(out.to_string())
    }

    /// Posterior of `x` for test row `row`, with the true value for reference.
    pub fn invert(&self, row: usize) -> Result<String, String> {
        let c = self.calibrated.as_ref().ok_or("run the selection first")?;
        if row >= self.test.n() {
            return Err(format!("row {row} is out of range"));
        }
        let z: Vec<f64> = c.joint.z_labels.iter().map(|l| self.test.z[(row, self.test.z_index(l).unwrap())]).collect();
        let y = [self.test.y[(row, 0)]];
        let est = estimate(&c.joint, &c.prior, &z, &y, &c.axes).map_err(err)?;
        let axis = est.grid.axes[0];
        let xs: Vec<f64> = (0..axis.count).map(|i| axis.value(i)).collect();
        let density = est.grid.marginal(0);
        let svg = curve_svg(&format!("Posterior of x, test row {row}"), "x", "density", &xs, &density, None);
        Ok(json!({
            "map": est.map[0],
            "interval": [est.intervals[0].0, est.intervals[0].1],
            "truth": self.test_clean.x[(row, 0)],
            "svg": svg,
        })
        .to_string())
    }

    /// Proportional marginal effects of the calibrated model's inputs.
    pub fn pme(&self, samples: usize) -> Result<String, String> {
        let c = self.calibrated.as_ref().ok_or("run the selection first")?;
        let report = decompose_model(&c.model, &self.train, SamplerKind::GaussianCopulaEmpirical, samples, self.seed).map_err(err)?;
        Ok(json!({
            "shares": report.inputs.iter().map(|s| json!({"variable": s.variable, "percent": s.share})).collect::<Vec<_>>(),
            "model_error": report.model_error_share,
            "svg": pie_svg(&report, None),
        })
        .to_string())
    }
}
