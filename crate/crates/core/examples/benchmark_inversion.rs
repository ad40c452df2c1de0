//! Inversion on the synthetic benchmark: selected, simple and complete models.
//!
//! `cargo run --release --example benchmark_inversion -- [seed] [rho_test]`

use std::time::Instant;

use sensorsel_core::inversion::{estimate_dataset, evaluate_estimates, fit_prior, GridSpec, JointModel, PriorKind};
use sensorsel_core::selection::{calibrate, sweep, SelectionConfig, SelectionProblem};
use sensorsel_core::synthetic::{simulate, SyntheticConfig};

fn main() -> sensorsel_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let rho_test: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let train_cfg = SyntheticConfig { n: 200, rho: 0.8, rho_u: 0.0, alpha_u: 0.0, sigma_mes: 0.05, seed };
    let test_cfg = SyntheticConfig { rho: rho_test, seed: seed + 1000, ..train_cfg.clone() };
    let (_, train) = simulate(&train_cfg)?;
    let (test_clean, test) = simulate(&test_cfg)?;
    let start = Instant::now();
    let config = SelectionConfig { seed, ..Default::default() };
    let res = sweep(&SelectionProblem::from_dataset(&train, None)?, 0, &config)?;
    let axes = GridSpec::default().axes(&train)?;
    let last = res.pareto.entries.len() - 1;
    let picks = [
        ("selected", res.chosen.clone()),
        ("simple", res.pareto.entries[0].best.clone().unwrap()),
        ("complete", res.pareto.entries[last].best.clone().unwrap()),
    ];
    for (name, record) in picks {
        let basis = res.basis_of(&record)?;
        let (model, ens) = calibrate(&train, 0, &basis, config.inner_b, config.seed)?;
        let jm = JointModel::new(vec![model], &[ens], vec![0.05])?;
        let prior = fit_prior(&train, &jm.z_labels, PriorKind::ConditionalKde)?;
        let est = estimate_dataset(&jm, &prior, &test, &axes)?;
        let m = &evaluate_estimates(&jm.x_labels, &est, &test_clean.x)?[0];
        println!(
            "{name:>9} {:?} k={} R2={:.3} MAE={:.3} L={:.3} cov={:.1}%",
            res.labels_of(&record.variables),
            basis.k(),
            m.r2,
            m.mae,
            m.interval_length_mean,
            m.coverage_pct
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
