//! Selection on the synthetic benchmark.
//!
//! `cargo run --release --example benchmark_selection -- [outer_m] [seed]`

use std::time::Instant;

use sensorsel_core::selection::{run_selection, SelectionConfig, SelectionProblem};
use sensorsel_core::synthetic::{simulate, SyntheticConfig};

fn main() -> sensorsel_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let outer_m: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = SyntheticConfig { n: 200, rho: 0.8, rho_u: 0.0, alpha_u: 0.0, sigma_mes: 0.05, seed };
    let (_, noisy) = simulate(&cfg)?;
    let problem = SelectionProblem::from_dataset(&noisy, None)?;
    let start = Instant::now();
    let res = run_selection(&problem, &[0], outer_m, &SelectionConfig { seed, ..Default::default() })?.remove(0);
    println!("chosen {:?} k={} bic={:.3} v={:.5}", res.chosen_labels(), res.chosen.term_subset.len(), res.chosen.report.bic, res.chosen.report.v);
    for f in &res.frequency_table {
        println!("{:>4} {:5.1}%", f.variable, f.percent);
    }
    for e in &res.pareto.entries {
        println!("l={} best={:?} mean_v={:?} modal={:?} {:.0}%", e.size, e.best_labels, e.mean_v, e.modal_labels, e.modal_frequency);
    }
    for w in &res.warnings {
        println!("warning: {w}");
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
