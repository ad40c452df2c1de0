//! One function per subcommand. Every file written carries the provenance of
//! the run that produced it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sensorsel_core::artifact::{ModelArtifact, OutputModel, Provenance};
use sensorsel_core::dataset::{load_csv, split, CalibrationDataset};
use sensorsel_core::inversion::{estimate_dataset, evaluate_estimates, fit_prior, JointModel, PredictionMetrics};
use sensorsel_core::pme::{decompose_model, PmeReport};
use sensorsel_core::report::{curve_svg, pareto_svg, pie_svg};
use sensorsel_core::resolution::{resolution_curve, ResolutionConfig, ResolutionCurve};
use sensorsel_core::rng::child_seed;
use sensorsel_core::selection::{calibrate, run_selection, CandidateRecord, SelectionConfig, SelectionProblem, SelectionResult};
use sensorsel_core::synthetic::{simulate, SyntheticConfig};
use sensorsel_core::Error;

use crate::config::RunConfig;

/// Shared state of one invocation.
pub struct Run {
    pub config: RunConfig,
    pub provenance: Provenance,
    pub out: PathBuf,
}

/// JSON file layout: what it holds, where it came from, and the payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    pub provenance: Provenance,
    pub body: T,
}

impl Run {
    pub fn new(config: RunConfig, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        let provenance = Provenance::new(config.hash());
        Ok(Run { config, provenance, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, kind: &str, body: T) -> Result<PathBuf> {
        let p = self.path(name);
        let env = Envelope { kind: kind.to_string(), provenance: self.provenance.clone(), body };
        fs::write(&p, serde_json::to_string_pretty(&env)?).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn write_csv(&self, name: &str, ds: &CalibrationDataset) -> Result<PathBuf> {
        let p = self.path(name);
        ds.save_csv(&p, Some(&self.provenance.line()))?;
        Ok(p)
    }

    fn line(&self) -> String {
        self.provenance.line()
    }
}

fn load_data(path: &Path, config: &RunConfig) -> Result<CalibrationDataset> {
    load_csv(path, &config.role_map).with_context(|| format!("loading {}", path.display()))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::InvalidConfig(format!("this command needs {flag}")).into())
}

/// Output file stem safe for any label.
fn stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn cmd_simulate(ctx: &Run) -> Result<Vec<PathBuf>> {
    let s = &ctx.config.simulate;
    let base = SyntheticConfig { n: s.n_train, rho: s.rho, rho_u: s.rho_u, alpha_u: s.alpha_u, sigma_mes: s.sigma_mes, seed: ctx.config.seed };
    let test_cfg = SyntheticConfig { n: s.n_test, rho: s.rho_test.unwrap_or(s.rho), seed: child_seed(ctx.config.seed, "simulate/test", 0), ..base };
    let (train_clean, train) = simulate(&base)?;
    let (test_clean, test) = simulate(&test_cfg)?;
    Ok(vec![
        ctx.write_csv("train.csv", &train)?,
        ctx.write_csv("train_clean.csv", &train_clean)?,
        ctx.write_csv("test.csv", &test)?,
        ctx.write_csv("test_clean.csv", &test_clean)?,
    ])
}

pub fn cmd_select(ctx: &Run, data: &Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let ds = load_data(required(data, "--data")?, cfg)?;
    let mut written = Vec::new();
    let train = match &cfg.split {
        Some(spec) => {
            let (train, test) = split(&ds, spec)?;
            written.push(ctx.write_csv("train.csv", &train)?);
            written.push(ctx.write_csv("test.csv", &test)?);
            train
        }
        None => ds,
    };
    let problem = SelectionProblem::from_dataset(&train, cfg.always_include.as_deref())?;
    let sel = SelectionConfig { p: cfg.p, inner_b: cfg.inner_b, seed: cfg.seed, keep_log: cfg.keep_log };
    let targets: Vec<usize> = (0..train.d_y()).collect();
    let mut results = run_selection(&problem, &targets, cfg.outer_m, &sel)?;

    if cfg.keep_log {
        let logs: Vec<(String, Vec<CandidateRecord>)> =
            results.iter_mut().map(|r| (r.target.clone(), r.all_records.take().unwrap_or_default())).collect();
        written.push(ctx.write_json("candidates.json", "candidates", logs)?);
    }
    for r in &results {
        written.push(ctx.write_text(&format!("pareto_{}.svg", stem(&r.target)), &pareto_svg(r, Some(&ctx.line())))?);
        println!("{}: selected {:?} (k = {}, V = {:.6e})", r.target, r.chosen_labels(), r.chosen.term_subset.len(), r.chosen.report.v);
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    written.push(ctx.write_json("selection.json", "selection", &results)?);

    let mut outputs = Vec::with_capacity(results.len());
    for (r, &t) in results.iter().zip(&targets) {
        let basis = r.chosen_basis()?;
        let (model, ensemble) = calibrate(&train, t, &basis, cfg.inner_b, cfg.seed)?;
        outputs.push(OutputModel { model, ensemble, selected: r.chosen_labels() });
    }
    let models: Vec<_> = outputs.iter().map(|o| o.model.clone()).collect();
    let ensembles: Vec<_> = outputs.iter().map(|o| o.ensemble.clone()).collect();
    let joint = JointModel::new(models, &ensembles, vec![0.0; train.d_x()])?;
    let prior = fit_prior(&train, &joint.z_labels, cfg.prior)?;
    let x_range = (0..train.d_x()).map(|j| (train.x.column(j).min(), train.x.column(j).max())).collect();
    let artifact = ModelArtifact { provenance: ctx.provenance.clone(), outputs, prior, x_range, seed: cfg.seed };
    let p = ctx.path("model.json");
    artifact.save(&p)?;
    written.push(p);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct InversionSummary {
    metrics: Vec<PredictionMetrics>,
    rows: usize,
    warnings: Vec<String>,
}

pub fn cmd_invert(ctx: &Run, model: &Option<PathBuf>, data: &Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let artifact = ModelArtifact::load(required(model, "--model")?)?;
    let ds = load_data(required(data, "--data")?, cfg)?;
    let labels = artifact.joint_model(vec![0.0; artifact.x_range.len()])?.x_labels;
    let jm = artifact.joint_model(cfg.sigma_for(&labels))?;
    let axes = cfg.grid.axes_from_ranges(&artifact.x_range, &labels)?;
    let estimates = estimate_dataset(&jm, &artifact.prior, &ds, &axes)?;

    let truth_cols: Vec<usize> = labels
        .iter()
        .map(|l| ds.x_names.iter().position(|n| n == l).ok_or_else(|| Error::MissingColumn(l.clone())))
        .collect::<Result<_, _>>()?;
    let truth = nalgebra::DMatrix::from_fn(ds.n(), labels.len(), |i, j| ds.x[(i, truth_cols[j])]);
    let metrics = evaluate_estimates(&labels, &estimates, &truth)?;

    let mut csv = format!("# {}\nrow", ctx.line());
    for l in &labels {
        csv.push_str(&format!(",{l}_map,{l}_lo,{l}_hi,{l}_true"));
    }
    csv.push('\n');
    let mut warnings = Vec::new();
    for (i, e) in estimates.iter().enumerate() {
        csv.push_str(&i.to_string());
        for j in 0..labels.len() {
            csv.push_str(&format!(",{},{},{},{}", e.map[j], e.intervals[j].0, e.intervals[j].1, truth[(i, j)]));
        }
        csv.push('\n');
        warnings.extend(e.warnings.iter().map(|w| format!("row {i}: {w}")));
    }
    for m in &metrics {
        println!(
            "{}: R2 = {:.3}, MAE = {:.3}, mean interval = {:.3}, coverage = {:.1}%",
            m.variable, m.r2, m.mae, m.interval_length_mean, m.coverage_pct
        );
    }
    let summary = InversionSummary { metrics, rows: ds.n(), warnings };
    Ok(vec![ctx.write_text("predictions.csv", &csv)?, ctx.write_json("metrics.json", "inversion_metrics", summary)?])
}

pub fn cmd_pme(ctx: &Run, model: &Option<PathBuf>, data: &Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let artifact = ModelArtifact::load(required(model, "--model")?)?;
    let train = load_data(required(data, "--data")?, cfg)?;
    let mut written = Vec::new();
    for (i, o) in artifact.outputs.iter().enumerate() {
        let seed = child_seed(cfg.seed, "pme", i as u64);
        let report = decompose_model(&o.model, &train, cfg.sampler, cfg.pme_samples, seed)?;
        let s = stem(&report.target);
        print!("{}:", report.target);
        for sh in &report.inputs {
            print!(" {} {:.1}%", sh.variable, sh.share);
        }
        println!(" model error {:.1}% (MC tolerance {:.1} points)", report.model_error_share, report.tolerance);
        written.push(ctx.write_text(&format!("pme_{s}.svg"), &pie_svg(&report, Some(&ctx.line())))?);
        written.push(ctx.write_json(&format!("pme_{s}.json"), "pme", report)?);
    }
    Ok(written)
}

pub fn cmd_resolution(ctx: &Run, model: &Option<PathBuf>, data: &Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let artifact = ModelArtifact::load(required(model, "--model")?)?;
    let train = load_data(required(data, "--data")?, cfg)?;
    let mut written = Vec::new();
    let mut curves: Vec<ResolutionCurve> = Vec::new();
    for (i, o) in artifact.outputs.iter().enumerate() {
        for (j, var) in o.model.basis.labels.iter().enumerate() {
            let rc = ResolutionConfig { seed: child_seed(cfg.seed, "resolution", (i * 1000 + j) as u64), ..cfg.resolution.clone() };
            let c = resolution_curve(&o.model, &train, var, &rc)?;
            let name = format!("resolution_{}_{}", stem(&o.model.target), stem(var));
            let mut csv = format!("# {}\n{var},delta,mc_stderr\n", ctx.line());
            for k in 0..c.grid.len() {
                csv.push_str(&format!("{},{},{}\n", c.grid[k], c.delta[k], c.mc_stderr[k]));
            }
            written.push(ctx.write_text(&format!("{name}.csv"), &csv)?);
            let title = format!("Level-{} resolution of {} in {var}", c.level, o.model.target);
            let svg = curve_svg(&title, var, "resolution", &c.grid, &c.delta, Some(&ctx.line()));
            written.push(ctx.write_text(&format!("{name}.svg"), &svg)?);
            let finite: Vec<f64> = c.delta.iter().copied().filter(|d| d.is_finite()).collect();
            if finite.is_empty() {
                println!("{} / {var}: never resolved", o.model.target);
            } else {
                let mean = finite.iter().sum::<f64>() / finite.len() as f64;
                println!("{} / {var}: mean resolution {mean:.4} over {} of {} grid points", o.model.target, finite.len(), c.grid.len());
            }
            curves.push(c);
        }
    }
    written.push(ctx.write_json("resolution.json", "resolution", curves)?);
    Ok(written)
}

fn read_envelope<T: DeserializeOwned>(value: Value, path: &Path) -> Result<Envelope<T>> {
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: schema mismatch: {e}", path.display())).into())
}

pub fn cmd_report(ctx: &Run, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("report needs at least one --data JSON file".into()).into());
    }
    let mut written = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let kind = value.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        match kind.as_str() {
            "selection" => {
                let env: Envelope<Vec<SelectionResult>> = read_envelope(value, path)?;
                let line = format!("{} source_{}", ctx.line(), env.provenance.line());
                if env.body.is_empty() {
                    return Err(Error::EmptyInput(format!("{} holds no selection results", path.display())).into());
                }
                for r in &env.body {
                    if r.pareto.entries.iter().all(|e| e.mean_v.is_none()) {
                        return Err(Error::EmptyInput(format!("selection for {} has no scored models", r.target)).into());
                    }
                    written.push(ctx.write_text(&format!("pareto_{}.svg", stem(&r.target)), &pareto_svg(r, Some(&line)))?);
                }
            }
            "pme" => {
                let env: Envelope<PmeReport> = read_envelope(value, path)?;
                if env.body.inputs.is_empty() {
                    return Err(Error::EmptyInput(format!("{} holds no PME shares", path.display())).into());
                }
                let line = format!("{} source_{}", ctx.line(), env.provenance.line());
                written.push(ctx.write_text(&format!("pme_{}.svg", stem(&env.body.target)), &pie_svg(&env.body, Some(&line)))?);
            }
            other => {
                return Err(Error::InvalidConfig(format!("{}: cannot render outputs of kind `{other}`", path.display())).into());
            }
        }
    }
    let mut index = fs::File::create(ctx.path("report.txt"))?;
    writeln!(index, "# {}", ctx.line())?;
    for p in &written {
        writeln!(index, "{}", p.display())?;
    }
    written.push(ctx.path("report.txt"));
    Ok(written)
}
