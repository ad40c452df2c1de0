//! Interferent selection.
//!
//! For every subset `alpha` of candidate variables the full polynomial basis
//! over (always-included variables, `alpha`) is pruned greedily, one term at a
//! time, and every nested model is scored by the BIC of its expected
//! prediction variance. All subsets share one set of bootstrap Gram caches
//! built on the basis over every variable, so each score is a handful of small
//! Cholesky solves.
//!
//! Subset sizes and selection frequencies are counted on the variables that
//! actually remain in a model's terms: pruning can drop every term of a
//! variable, in which case the model belongs with the smaller subset.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DMatrix;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::glr::{self, FittedModel, GramCache, SolveScratch};
use crate::rng;
use crate::uncertainty::{bootstrap_ensemble, moments_of_design, variance_objective, BootstrapEnsemble, VarianceReport};

/// Largest candidate count accepted by the exhaustive sweep.
pub const MAX_CANDIDATES: usize = 15;

/// BIC differences below this are ties.
pub const BIC_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub p: u32,
    /// Inner bootstrap resamples per model score.
    pub inner_b: usize,
    pub seed: u64,
    /// Keep every scored record in the result.
    pub keep_log: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { p: 3, inner_b: 200, seed: 0, keep_log: false }
    }
}

/// Input columns of a selection run, split into always-included variables and
/// candidates.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    pub fixed_labels: Vec<String>,
    pub candidate_labels: Vec<String>,
    /// `n x (fixed + candidates)`, fixed columns first.
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub output_labels: Vec<String>,
}

impl SelectionProblem {
    /// `always_include` defaults to every target column. Candidates are the
    /// remaining target columns followed by the interferents; passing an empty
    /// list therefore gives the agnostic mode where everything competes.
    pub fn from_dataset(ds: &CalibrationDataset, always_include: Option<&[String]>) -> Result<Self> {
        let all: Vec<&String> = ds.x_names.iter().chain(&ds.z_names).collect();
        let fixed: Vec<String> = match always_include {
            None => ds.x_names.clone(),
            Some(names) => {
                for name in names {
                    if !all.contains(&name) {
                        return Err(Error::MissingColumn(name.clone()));
                    }
                }
                let mut out: Vec<String> = Vec::new();
                for name in names {
                    if !out.contains(name) {
                        out.push(name.clone());
                    }
                }
                out
            }
        };
        let candidates: Vec<String> = all.iter().filter(|n| !fixed.contains(n)).map(|n| (*n).clone()).collect();
        if candidates.len() > MAX_CANDIDATES {
            return Err(Error::TooManyInterferents(candidates.len()));
        }
        let column = |name: &String| -> Vec<f64> {
            if let Some(j) = ds.x_names.iter().position(|n| n == name) {
                ds.x.column(j).iter().copied().collect()
            } else {
                let j = ds.z_index(name).expect("validated above");
                ds.z.column(j).iter().copied().collect()
            }
        };
        let cols: Vec<Vec<f64>> = fixed.iter().chain(&candidates).map(column).collect();
        let inputs = DMatrix::from_fn(ds.n(), cols.len(), |i, j| cols[j][i]);
        Ok(SelectionProblem {
            fixed_labels: fixed,
            candidate_labels: candidates,
            inputs,
            outputs: ds.y.clone(),
            output_labels: ds.y_names.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn d_fixed(&self) -> usize {
        self.fixed_labels.len()
    }

    pub fn d_candidates(&self) -> usize {
        self.candidate_labels.len()
    }

    /// Copy made of `rows` (with repetition).
    pub fn resample(&self, rows: &[usize]) -> SelectionProblem {
        SelectionProblem {
            fixed_labels: self.fixed_labels.clone(),
            candidate_labels: self.candidate_labels.clone(),
            inputs: self.inputs.select_rows(rows),
            outputs: self.outputs.select_rows(rows),
            output_labels: self.output_labels.clone(),
        }
    }

    fn labels(&self) -> Vec<String> {
        self.fixed_labels.iter().chain(&self.candidate_labels).cloned().collect()
    }
}

/// One scored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Candidate subset whose full basis started the chain.
    pub alpha: Vec<usize>,
    /// Candidates still present in the retained terms.
    pub variables: Vec<usize>,
    /// Indices into the all-variable full basis; always contains 0, the constant.
    pub term_subset: Vec<usize>,
    pub report: VarianceReport,
}

impl CandidateRecord {
    fn cmp_rank(&self, other: &CandidateRecord) -> Ordering {
        let (a, b) = (self.report.bic, other.report.bic);
        if (a - b).abs() > BIC_TIE {
            return a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        }
        self.term_subset
            .len()
            .cmp(&other.term_subset.len())
            .then(self.variables.len().cmp(&other.variables.len()))
            .then_with(|| self.variables.cmp(&other.variables))
    }
}

/// Everything a sweep needs that does not depend on the subset.
pub struct SweepContext {
    pub full: PolynomialBasis,
    m_f: Vec<f64>,
    c_f: DMatrix<f64>,
    point: GramCache,
    caches: Vec<GramCache>,
    d_fixed: usize,
    d_c: usize,
}

impl SweepContext {
    pub fn new(problem: &SelectionProblem, config: &SelectionConfig) -> Result<Self> {
        let d_c = problem.d_candidates();
        if d_c > MAX_CANDIDATES {
            return Err(Error::TooManyInterferents(d_c));
        }
        if config.inner_b < 2 {
            return Err(Error::InvalidConfig("inner_b must be at least 2".into()));
        }
        let full = PolynomialBasis::from_columns(problem.labels(), problem.d_fixed(), (0..d_c).collect(), config.p, &problem.inputs)?;
        let n = problem.n();
        if n <= full.k() {
            return Err(Error::Underdetermined { n, k: full.k() });
        }
        let design = full.design_matrix(&problem.inputs);
        let (m_f, c_f) = moments_of_design(&design);
        let point = GramCache::from_design((0..n).collect(), &design, &problem.outputs);
        let caches = (0..config.inner_b)
            .map(|b| {
                let s = rng::child_seed(config.seed, "inner-bootstrap", b as u64);
                let mut c = GramCache::from_design(rng::resample_indices(s, n), &design, &problem.outputs);
                c.seed = Some(s);
                c
            })
            .collect();
        Ok(SweepContext { full, m_f, c_f, point, caches, d_fixed: problem.d_fixed(), d_c })
    }

    /// Terms of the full basis whose exponents vanish outside `alpha`.
    pub fn terms_for(&self, alpha_mask: u32) -> Vec<usize> {
        (0..self.full.k())
            .filter(|&t| (0..self.d_c).all(|c| alpha_mask & (1 << c) != 0 || self.full.terms[t].0[self.d_fixed + c] == 0))
            .collect()
    }

    fn variables_of(&self, terms: &[usize]) -> Vec<usize> {
        (0..self.d_c)
            .filter(|&c| terms.iter().any(|&t| self.full.terms[t].0[self.d_fixed + c] > 0))
            .collect()
    }

    /// Variance report of a term subset on output `target`.
    pub fn score(&self, terms: &[usize], target: usize) -> Result<VarianceReport> {
        let ens = bootstrap_ensemble(terms, target, &self.caches)?;
        let m_f: Vec<f64> = terms.iter().map(|&t| self.m_f[t]).collect();
        let c_f = DMatrix::from_fn(terms.len(), terms.len(), |i, j| self.c_f[(terms[i], terms[j])]);
        variance_objective(&m_f, &c_f, &ens, self.point.n())
    }

    fn record(&self, alpha: &[usize], terms: &[usize], target: usize) -> Result<CandidateRecord> {
        Ok(CandidateRecord {
            alpha: alpha.to_vec(),
            variables: self.variables_of(terms),
            term_subset: terms.to_vec(),
            report: self.score(terms, target)?,
        })
    }
}

/// Outcome of one chain: the scored records and how many models could not be scored.
#[derive(Debug, Clone, Default)]
pub struct Chain {
    pub records: Vec<CandidateRecord>,
    pub unscored: usize,
}

/// Backward elimination from the full basis of `alpha_mask`, dropping the
/// smallest non-constant coefficient of the point fit after every refit.
pub fn greedy_chain(ctx: &SweepContext, alpha_mask: u32, target: usize) -> Result<Chain> {
    let alpha: Vec<usize> = (0..ctx.d_c).filter(|c| alpha_mask & (1 << c) != 0).collect();
    let mut terms = ctx.terms_for(alpha_mask);
    let n = ctx.point.n();
    if n <= terms.len() {
        return Err(Error::Underdetermined { n, k: terms.len() });
    }
    let mut chain = Chain::default();
    let mut scratch = SolveScratch::default();
    loop {
        match ctx.record(&alpha, &terms, target) {
            Ok(r) => chain.records.push(r),
            Err(e) if e.is_numerical() => chain.unscored += 1,
            Err(e) => return Err(e),
        }
        if terms.len() <= 2 {
            break;
        }
        let fit = glr::fit_from_gram_with(&ctx.point, &terms, target, &mut scratch)?;
        let (drop, _) = fit
            .beta
            .iter()
            .enumerate()
            .filter(|&(i, _)| !ctx.full.terms[terms[i]].is_constant())
            .fold((usize::MAX, f64::INFINITY), |best, (i, b)| if b.abs() < best.1 { (i, b.abs()) } else { best });
        terms.remove(drop);
    }
    Ok(chain)
}

/// Result of one sweep over all subsets for one output.
#[derive(Debug, Clone)]
struct SweepOutcome {
    chosen: CandidateRecord,
    /// Best record per effective subset size `0..=d_c`.
    per_size: Vec<Option<CandidateRecord>>,
    records: Vec<CandidateRecord>,
    unscored: usize,
    unreliable: usize,
}

fn sweep_target(ctx: &SweepContext, target: usize, keep_log: bool) -> Result<SweepOutcome> {
    let masks: Vec<u32> = (0..1u32 << ctx.d_c).collect();
    #[cfg(feature = "parallel")]
    let chains: Vec<Result<Chain>> = masks.par_iter().map(|&m| greedy_chain(ctx, m, target)).collect();
    #[cfg(not(feature = "parallel"))]
    let chains: Vec<Result<Chain>> = masks.iter().map(|&m| greedy_chain(ctx, m, target)).collect();

    let mut chosen: Option<CandidateRecord> = None;
    let mut per_size: Vec<Option<CandidateRecord>> = vec![None; ctx.d_c + 1];
    let mut records = Vec::new();
    let mut unscored = 0;
    let mut unreliable = 0;
    for chain in chains {
        let chain = chain?;
        unscored += chain.unscored;
        for r in chain.records {
            unreliable += usize::from(r.report.reliability_warning);
            if chosen.as_ref().map_or(true, |c| r.cmp_rank(c) == Ordering::Less) {
                chosen = Some(r.clone());
            }
            let slot = &mut per_size[r.variables.len()];
            if slot.as_ref().map_or(true, |c| r.cmp_rank(c) == Ordering::Less) {
                *slot = Some(r.clone());
            }
            if keep_log {
                records.push(r);
            }
        }
    }
    let chosen = chosen.ok_or_else(|| Error::NumericalFailure("no model could be scored".into()))?;
    Ok(SweepOutcome { chosen, per_size, records, unscored, unreliable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableFrequency {
    pub variable: String,
    /// Percentage of replicates whose chosen model uses the variable.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    /// Number of candidates in the model.
    pub size: usize,
    /// Lowest-BIC record of this size in the plain run.
    pub best: Option<CandidateRecord>,
    pub best_labels: Vec<String>,
    /// V of `best`, or its mean over the replicates when bootstrapped.
    pub mean_v: Option<f64>,
    /// Share of replicates whose best subset of this size is `best`'s.
    pub frequency: f64,
    pub modal_variables: Vec<usize>,
    pub modal_labels: Vec<String>,
    pub modal_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub entries: Vec<ParetoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub target: String,
    pub fixed_labels: Vec<String>,
    pub candidate_labels: Vec<String>,
    /// Global BIC minimum of the plain (un-resampled) run.
    pub chosen: CandidateRecord,
    pub pareto: ParetoFront,
    pub frequency_table: Vec<VariableFrequency>,
    /// Outer replicates behind the frequencies; 0 for a single sweep.
    pub replicates: usize,
    /// The all-variable basis that `term_subset` indexes into.
    pub full_basis: PolynomialBasis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all_records: Option<Vec<CandidateRecord>>,
    pub warnings: Vec<String>,
}

impl SelectionResult {
    pub fn labels_of(&self, vars: &[usize]) -> Vec<String> {
        vars.iter().map(|&c| self.candidate_labels[c].clone()).collect()
    }

    /// Labels of the chosen candidates.
    pub fn chosen_labels(&self) -> Vec<String> {
        self.labels_of(&self.chosen.variables)
    }

    /// Basis of a record, restricted to the variables it uses.
    pub fn basis_of(&self, record: &CandidateRecord) -> Result<PolynomialBasis> {
        let d_f = self.fixed_labels.len();
        let keep: Vec<usize> = (0..d_f).chain(record.variables.iter().map(|c| d_f + c)).collect();
        self.full_basis.select(&record.term_subset, &keep)
    }

    pub fn chosen_basis(&self) -> Result<PolynomialBasis> {
        self.basis_of(&self.chosen)
    }

    pub fn frequency(&self, label: &str) -> Option<f64> {
        self.frequency_table.iter().find(|f| f.variable == label).map(|f| f.percent)
    }
}

fn outcome_warnings(o: &SweepOutcome) -> Vec<String> {
    let mut w = Vec::new();
    if o.unscored > 0 {
        w.push(format!("{} models could not be scored and were skipped", o.unscored));
    }
    if o.unreliable > 0 {
        w.push(format!("{} models relied on the pseudo-inverse in more than 10% of the bootstrap refits", o.unreliable));
    }
    if o.chosen.report.reliability_warning {
        w.push("the chosen model is flagged as numerically unreliable".into());
    }
    w
}

/// Per-output data gathered from one outer replicate.
#[derive(Debug, Clone)]
struct ReplicateSummary {
    chosen: Vec<usize>,
    per_size: Vec<Option<(Vec<usize>, f64)>>,
}

fn summarize(o: &SweepOutcome) -> ReplicateSummary {
    ReplicateSummary {
        chosen: o.chosen.variables.clone(),
        per_size: o.per_size.iter().map(|r| r.as_ref().map(|r| (r.variables.clone(), r.report.v))).collect(),
    }
}

fn assemble(problem: &SelectionProblem, ctx: &SweepContext, target: usize, plain: SweepOutcome, reps: &[ReplicateSummary], keep_log: bool) -> SelectionResult {
    let d_c = problem.d_candidates();
    let labels = |vars: &[usize]| vars.iter().map(|&c| problem.candidate_labels[c].clone()).collect::<Vec<_>>();
    let mut warnings = outcome_warnings(&plain);

    let frequency_table = (0..d_c)
        .map(|c| {
            let percent = if reps.is_empty() {
                if plain.chosen.variables.contains(&c) {
                    100.0
                } else {
                    0.0
                }
            } else {
                100.0 * reps.iter().filter(|r| r.chosen.contains(&c)).count() as f64 / reps.len() as f64
            };
            VariableFrequency { variable: problem.candidate_labels[c].clone(), percent }
        })
        .collect();

    let entries = (0..=d_c)
        .map(|size| {
            let best = plain.per_size[size].clone();
            let best_vars = best.as_ref().map(|b| b.variables.clone()).unwrap_or_default();
            if reps.is_empty() {
                return ParetoEntry {
                    size,
                    best_labels: labels(&best_vars),
                    mean_v: best.as_ref().map(|b| b.report.v),
                    frequency: if best.is_some() { 100.0 } else { 0.0 },
                    modal_labels: labels(&best_vars),
                    modal_variables: best_vars,
                    modal_frequency: if best.is_some() { 100.0 } else { 0.0 },
                    best,
                };
            }
            let hits: Vec<&(Vec<usize>, f64)> = reps.iter().filter_map(|r| r.per_size[size].as_ref()).collect();
            let mean_v = (!hits.is_empty()).then(|| hits.iter().map(|h| h.1).sum::<f64>() / hits.len() as f64);
            let mut counts: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
            for h in &hits {
                *counts.entry(&h.0).or_default() += 1;
            }
            // BTreeMap order makes the modal choice deterministic on ties.
            let modal = counts.iter().fold(None::<(&Vec<usize>, usize)>, |m, (v, &c)| match m {
                Some((_, mc)) if mc >= c => m,
                _ => Some((v, c)),
            });
            let pct = |c: usize| 100.0 * c as f64 / reps.len() as f64;
            let frequency = best.as_ref().map_or(0.0, |b| pct(counts.get(&b.variables).copied().unwrap_or(0)));
            let (modal_variables, modal_frequency) = modal.map_or((Vec::new(), 0.0), |(v, c)| (v.clone(), pct(c)));
            ParetoEntry {
                size,
                best_labels: labels(&best_vars),
                best,
                mean_v,
                frequency,
                modal_labels: labels(&modal_variables),
                modal_variables,
                modal_frequency,
            }
        })
        .collect();

    if !reps.is_empty() {
        let missing = reps.iter().filter(|r| r.per_size.iter().all(Option::is_none)).count();
        if missing > 0 {
            warnings.push(format!("{missing} outer replicates produced no scorable model"));
        }
    }
    SelectionResult {
        target: problem.output_labels[target].clone(),
        fixed_labels: problem.fixed_labels.clone(),
        candidate_labels: problem.candidate_labels.clone(),
        chosen: plain.chosen,
        pareto: ParetoFront { entries },
        frequency_table,
        replicates: reps.len(),
        full_basis: ctx.full.clone(),
        all_records: keep_log.then_some(plain.records),
        warnings,
    }
}

/// Selection for several outputs sharing caches. `outer_m = 0` runs the plain
/// sweep only; otherwise frequencies and the Pareto front aggregate `outer_m`
/// sweeps on resampled copies of the data, each with fresh inner caches.
pub fn run_selection(problem: &SelectionProblem, targets: &[usize], outer_m: usize, config: &SelectionConfig) -> Result<Vec<SelectionResult>> {
    if let Some(&t) = targets.iter().find(|&&t| t >= problem.outputs.ncols()) {
        return Err(Error::InvalidConfig(format!("output index {t} out of range")));
    }
    let ctx = SweepContext::new(problem, config)?;
    let plain: Vec<SweepOutcome> = targets.iter().map(|&t| sweep_target(&ctx, t, config.keep_log)).collect::<Result<_>>()?;

    let replicate = |m: usize| -> Result<Option<Vec<ReplicateSummary>>> {
        let seed = rng::child_seed(config.seed, "outer-bootstrap", m as u64);
        let copy = problem.resample(&rng::resample_indices(seed, problem.n()));
        let cfg = SelectionConfig { seed, keep_log: false, ..config.clone() };
        let ctx = match SweepContext::new(&copy, &cfg) {
            Ok(c) => c,
            // A resample can lose every distinct value of a rare column.
            Err(Error::DegenerateTerm { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        targets
            .iter()
            .map(|&t| match sweep_target(&ctx, t, false) {
                Ok(o) => Ok(summarize(&o)),
                Err(e) if e.is_numerical() => Ok(ReplicateSummary { chosen: Vec::new(), per_size: vec![None; copy.d_candidates() + 1] }),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    #[cfg(feature = "parallel")]
    let reps: Vec<Option<Vec<ReplicateSummary>>> = (0..outer_m).into_par_iter().map(replicate).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let reps: Vec<Option<Vec<ReplicateSummary>>> = (0..outer_m).map(replicate).collect::<Result<_>>()?;

    let skipped = reps.iter().filter(|r| r.is_none()).count();
    let reps: Vec<Vec<ReplicateSummary>> = reps.into_iter().flatten().collect();
    if outer_m > 0 && reps.is_empty() {
        return Err(Error::NumericalFailure("every outer replicate had a degenerate basis".into()));
    }
    Ok(plain
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let per_target: Vec<ReplicateSummary> = reps.iter().map(|r| r[i].clone()).collect();
            let mut res = assemble(problem, &ctx, targets[i], o, &per_target, config.keep_log);
            if skipped > 0 {
                res.warnings.push(format!("{skipped} outer replicates skipped for a degenerate basis term"));
            }
            res
        })
        .collect())
}

/// Exhaustive subset sweep for one output.
pub fn sweep(problem: &SelectionProblem, target: usize, config: &SelectionConfig) -> Result<SelectionResult> {
    Ok(run_selection(problem, &[target], 0, config)?.remove(0))
}

/// Sweep plus `m` outer-bootstrap replicates for one output.
pub fn outer_bootstrap(problem: &SelectionProblem, target: usize, m: usize, config: &SelectionConfig) -> Result<SelectionResult> {
    if m == 0 {
        return Err(Error::InvalidConfig("the outer bootstrap needs at least one replicate".into()));
    }
    Ok(run_selection(problem, &[target], m, config)?.remove(0))
}

/// Point fit and bootstrap ensemble of a fixed basis on `train`. Resample
/// seeds depend only on `(seed, b)`, so ensembles of different outputs built
/// with the same seed are aligned replicate by replicate.
pub fn calibrate(train: &CalibrationDataset, target: usize, basis: &PolynomialBasis, inner_b: usize, seed: u64) -> Result<(FittedModel, BootstrapEnsemble)> {
    let model = glr::fit(train, target, basis)?;
    let design = basis.design_matrix(&basis.inputs_of(train)?);
    let caches: Vec<GramCache> = (0..inner_b)
        .map(|b| {
            let s = rng::child_seed(seed, "inner-bootstrap", b as u64);
            let mut c = GramCache::from_design(rng::resample_indices(s, train.n()), &design, &train.y);
            c.seed = Some(s);
            c
        })
        .collect();
    let all: Vec<usize> = (0..basis.k()).collect();
    let ens = bootstrap_ensemble(&all, target, &caches)?;
    Ok((model, ens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn dataset(n: usize, d_z: usize, seed: u64, f: impl Fn(f64, &[f64]) -> f64, noise: f64) -> CalibrationDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| r.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, d_z, |_, _| r.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            let zr: Vec<f64> = z.row(i).iter().copied().collect();
            f(x[(i, 0)], &zr) + noise * r.sample::<f64, _>(StandardNormal)
        });
        let z_names = (1..=d_z).map(|i| format!("z{i}")).collect();
        CalibrationDataset::new(vec!["x".into()], z_names, vec!["y".into()], x, z, y, None).unwrap()
    }

    fn cfg(p: u32, b: usize) -> SelectionConfig {
        SelectionConfig { p, inner_b: b, seed: 11, keep_log: true }
    }

    #[test]
    fn first_removal_is_the_inert_variable() {
        let ds = dataset(80, 1, 1, |x, _| 3.0 * x, 0.1);
        let problem = SelectionProblem::from_dataset(&ds, None).unwrap();
        let ctx = SweepContext::new(&problem, &cfg(1, 20)).unwrap();
        let chain = greedy_chain(&ctx, 1, 0).unwrap();
        assert_eq!(chain.records.len(), 2);
        assert_eq!(chain.records[0].term_subset, vec![0, 1, 2]);
        // terms: 1, x, z1 ; z1 goes first
        assert_eq!(ctx.full.term_name(chain.records[1].term_subset[1]), "x");
    }

    #[test]
    fn chain_has_k_minus_one_records() {
        let ds = dataset(120, 2, 2, |x, z| x + z[0] * x, 0.1);
        let problem = SelectionProblem::from_dataset(&ds, None).unwrap();
        let ctx = SweepContext::new(&problem, &cfg(2, 10)).unwrap();
        let k = ctx.terms_for(0b11).len();
        assert_eq!(greedy_chain(&ctx, 0b11, 0).unwrap().records.len(), k - 1);
        for r in greedy_chain(&ctx, 0b01, 0).unwrap().records {
            assert_eq!(r.term_subset[0], 0);
            assert!(!r.variables.contains(&1));
        }
    }

    #[test]
    fn no_candidates_scores_only_the_simple_family() {
        let ds = dataset(60, 0, 3, |x, _| 1.0 + x * x, 0.1);
        let res = sweep(&SelectionProblem::from_dataset(&ds, None).unwrap(), 0, &cfg(2, 10)).unwrap();
        assert!(res.chosen.variables.is_empty());
        assert_eq!(res.pareto.entries.len(), 1);
        assert!(res.all_records.unwrap().iter().all(|r| r.alpha.is_empty()));
    }

    #[test]
    fn recovers_polynomial_in_x_and_z2() {
        let ds = dataset(150, 3, 4, |x, z| 1.0 + x + 0.8 * z[1] - 0.5 * x * z[1] + 0.3 * z[1] * z[1], 1e-3);
        let res = sweep(&SelectionProblem::from_dataset(&ds, None).unwrap(), 0, &cfg(2, 30)).unwrap();
        assert_eq!(res.chosen_labels(), vec!["z2".to_string()]);
    }

    #[test]
    fn chosen_is_minimum_of_the_log_and_fixed_vars_always_present() {
        let ds = dataset(100, 2, 5, |x, z| x + 0.5 * z[0], 0.2);
        let res = sweep(&SelectionProblem::from_dataset(&ds, None).unwrap(), 0, &cfg(2, 15)).unwrap();
        let log = res.all_records.clone().unwrap();
        assert!(log.iter().all(|r| r.report.bic >= res.chosen.report.bic - BIC_TIE));
        for r in &log {
            let b = res.basis_of(r).unwrap();
            assert_eq!(b.labels[0], "x");
        }
        assert_eq!(res.pareto.entries.len(), 3);
    }

    #[test]
    fn model_error_grows_along_a_low_noise_chain() {
        let ds = dataset(200, 1, 6, |x, z| 1.0 + x + 0.7 * z[0] + 0.4 * x * z[0] + 0.2 * x * x, 1e-3);
        let problem = SelectionProblem::from_dataset(&ds, None).unwrap();
        let ctx = SweepContext::new(&problem, &cfg(2, 20)).unwrap();
        let recs = greedy_chain(&ctx, 1, 0).unwrap().records;
        for w in recs.windows(2) {
            let tol = 1e-6 * w[0].report.term_model_error.max(1e-12);
            assert!(w[1].report.term_model_error >= w[0].report.term_model_error - tol);
        }
    }

    #[test]
    fn deterministic_and_single_replicate_is_binary() {
        let ds = dataset(90, 2, 7, |x, z| x + z[1], 0.1);
        let problem = SelectionProblem::from_dataset(&ds, None).unwrap();
        let a = outer_bootstrap(&problem, 0, 1, &cfg(1, 10)).unwrap();
        let b = outer_bootstrap(&problem, 0, 1, &cfg(1, 10)).unwrap();
        assert_eq!(a, b);
        assert!(a.frequency_table.iter().all(|f| f.percent == 0.0 || f.percent == 100.0));
    }

    #[test]
    fn agnostic_mode_lets_x_compete() {
        let ds = dataset(100, 1, 8, |_, z| 2.0 * z[0], 0.05);
        let problem = SelectionProblem::from_dataset(&ds, Some(&[])).unwrap();
        assert_eq!(problem.candidate_labels, vec!["x", "z1"]);
        let res = sweep(&problem, 0, &cfg(1, 20)).unwrap();
        assert_eq!(res.chosen_labels(), vec!["z1".to_string()]);
    }

    #[test]
    fn too_many_candidates_rejected() {
        let ds = dataset(30, 16, 9, |x, _| x, 0.1);
        assert!(matches!(SelectionProblem::from_dataset(&ds, None), Err(Error::TooManyInterferents(16))));
    }

    #[test]
    fn calibrated_ensembles_share_seeds() {
        let ds = dataset(60, 1, 10, |x, z| x + z[0], 0.1);
        let res = sweep(&SelectionProblem::from_dataset(&ds, None).unwrap(), 0, &cfg(1, 10)).unwrap();
        let basis = res.chosen_basis().unwrap();
        let (m, e) = calibrate(&ds, 0, &basis, 10, 3).unwrap();
        let (_, e2) = calibrate(&ds, 0, &basis, 10, 3).unwrap();
        assert_eq!(e.resample_seeds, e2.resample_seeds);
        assert_eq!(m.beta_hat.len(), basis.k());
    }
}
