//! Normalized polynomial feature vectors.
//!
//! A basis is built over an ordered list of input variables: the `d_x`
//! always-included variables first (normally the targets `x`), then the
//! selected interferents `z_alpha`. Terms are all monomials of total degree
//! `<= p` in graded lexicographic order, constant first. Every non-constant
//! monomial is centred and scaled with statistics frozen from the training
//! rows, so coefficient magnitudes are comparable across terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }
}

/// All exponent vectors over `nvars` variables with total degree `<= p`:
/// by degree, then lexicographically decreasing (`x^2` before `x z`).
pub fn enumerate_terms(nvars: usize, p: u32) -> Vec<MultiIndex> {
    fn fill(var: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if var + 1 == cur.len() {
            cur[var] = left;
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for e in (0..=left).rev() {
            cur[var] = e;
            fill(var + 1, left - e, cur, out);
        }
        cur[var] = 0;
    }
    let mut out = Vec::new();
    if nvars == 0 {
        out.push(MultiIndex(Vec::new()));
        return out;
    }
    let mut cur = vec![0; nvars];
    for deg in 0..=p {
        fill(0, deg, &mut cur, &mut out);
    }
    out
}

/// Position of a basis variable in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRef {
    X(usize),
    Z(usize),
}

impl ColumnRef {
    pub fn get(&self, ds: &CalibrationDataset, i: usize) -> f64 {
        match *self {
            ColumnRef::X(j) => ds.x[(i, j)],
            ColumnRef::Z(j) => ds.z[(i, j)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    /// Names of the input variables, always-included ones first.
    pub labels: Vec<String>,
    /// Number of leading always-included variables.
    pub d_x: usize,
    /// Candidate indices of the trailing variables (interferent columns of the
    /// training data). Dataset access goes through `labels`.
    pub alpha: Vec<usize>,
    pub p: u32,
    pub terms: Vec<MultiIndex>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl PolynomialBasis {
    /// Full basis over the given input columns (`n x (d_x + #alpha)`).
    pub fn from_columns(labels: Vec<String>, d_x: usize, alpha: Vec<usize>, p: u32, inputs: &DMatrix<f64>) -> Result<Self> {
        if p < 1 {
            return Err(Error::InvalidConfig("polynomial degree must be at least 1".into()));
        }
        if inputs.nrows() < 2 {
            return Err(Error::Underdetermined { n: inputs.nrows(), k: 2 });
        }
        if labels.len() != d_x + alpha.len() || inputs.ncols() != labels.len() {
            return Err(Error::DimensionMismatch("basis labels / inputs".into()));
        }
        let terms = enumerate_terms(labels.len(), p);
        let mut basis = PolynomialBasis {
            labels,
            d_x,
            alpha,
            p,
            norm_mean: vec![0.0; terms.len()],
            norm_std: vec![1.0; terms.len()],
            terms,
        };
        basis.fit_normalization(inputs)?;
        Ok(basis)
    }

    fn fit_normalization(&mut self, inputs: &DMatrix<f64>) -> Result<()> {
        let n = inputs.nrows() as f64;
        let mut sum = vec![0.0; self.terms.len()];
        let mut raw = vec![0.0; self.terms.len()];
        let rows: Vec<Vec<f64>> = (0..inputs.nrows()).map(|i| inputs.row(i).iter().copied().collect()).collect();
        for w in &rows {
            self.raw_into(w, &mut raw);
            for (s, r) in sum.iter_mut().zip(&raw) {
                *s += r;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut ss = vec![0.0; self.terms.len()];
        for w in &rows {
            self.raw_into(w, &mut raw);
            for ((s, r), m) in ss.iter_mut().zip(&raw).zip(&mean) {
                *s += (r - m) * (r - m);
            }
        }
        for (t, term) in self.terms.iter().enumerate() {
            if term.is_constant() {
                continue;
            }
            let sd = (ss[t] / n).sqrt();
            if !(sd > 1e-12 * (1.0 + mean[t].abs())) {
                return Err(Error::DegenerateTerm { term: self.term_name(t) });
            }
            self.norm_mean[t] = mean[t];
            self.norm_std[t] = sd;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.terms.len()
    }

    pub fn nvars(&self) -> usize {
        self.labels.len()
    }

    /// Human-readable monomial, e.g. `x^2*z1`.
    pub fn term_name(&self, t: usize) -> String {
        let parts: Vec<String> = self.terms[t]
            .0
            .iter()
            .zip(&self.labels)
            .filter(|(e, _)| **e > 0)
            .map(|(e, l)| if *e == 1 { l.clone() } else { format!("{l}^{e}") })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }

    fn powers(&self, w: &[f64]) -> Vec<Vec<f64>> {
        w.iter()
            .map(|&v| {
                let mut p = Vec::with_capacity(self.p as usize + 1);
                let mut acc = 1.0;
                for _ in 0..=self.p {
                    p.push(acc);
                    acc *= v;
                }
                p
            })
            .collect()
    }

    fn raw_into(&self, w: &[f64], out: &mut [f64]) {
        let pw = self.powers(w);
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = term.0.iter().enumerate().map(|(v, &e)| pw[v][e as usize]).product();
        }
    }

    /// Raw (unnormalized) monomial values at the concatenated input `w`.
    pub fn raw(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.raw_into(w, &mut out);
        out
    }

    /// Normalized feature vector at the concatenated input `w = (x, z_alpha)`.
    pub fn evaluate_inputs(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.raw(w);
        for (t, o) in out.iter_mut().enumerate() {
            if !self.terms[t].is_constant() {
                *o = (*o - self.norm_mean[t]) / self.norm_std[t];
            } else {
                *o = 1.0;
            }
        }
        out
    }

    /// Normalized feature vector; `z_row` holds the values of `z_alpha`.
    pub fn evaluate(&self, x_row: &[f64], z_row: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = x_row.iter().chain(z_row).copied().collect();
        self.evaluate_inputs(&w)
    }

    /// Derivative of every normalized term with respect to input variable `var`.
    pub fn derivative_inputs(&self, var: usize, w: &[f64]) -> Vec<f64> {
        let pw = self.powers(w);
        self.terms
            .iter()
            .enumerate()
            .map(|(t, term)| {
                let e = term.0[var];
                if e == 0 {
                    return 0.0;
                }
                let mut d = f64::from(e) * pw[var][e as usize - 1];
                for (v, &ev) in term.0.iter().enumerate() {
                    if v != var {
                        d *= pw[v][ev as usize];
                    }
                }
                d / self.norm_std[t]
            })
            .collect()
    }

    /// Derivative of the feature vector with respect to target `x_j`.
    pub fn partial_derivative(&self, j: usize, x_row: &[f64], z_row: &[f64]) -> Vec<f64> {
        assert!(j < self.d_x, "target index out of range");
        let w: Vec<f64> = x_row.iter().chain(z_row).copied().collect();
        self.derivative_inputs(j, &w)
    }

    /// Locates every input variable of the basis among the dataset columns, by label.
    pub fn column_refs(&self, ds: &CalibrationDataset) -> Result<Vec<ColumnRef>> {
        self.labels
            .iter()
            .map(|l| {
                if let Some(i) = ds.x_names.iter().position(|n| n == l) {
                    Ok(ColumnRef::X(i))
                } else if let Some(i) = ds.z_names.iter().position(|n| n == l) {
                    Ok(ColumnRef::Z(i))
                } else {
                    Err(Error::MissingColumn(l.clone()))
                }
            })
            .collect()
    }

    /// Input matrix `(x, z_alpha)` of a dataset, one row per sample.
    pub fn inputs_of(&self, ds: &CalibrationDataset) -> Result<DMatrix<f64>> {
        let refs = self.column_refs(ds)?;
        Ok(DMatrix::from_fn(ds.n(), refs.len(), |i, v| refs[v].get(ds, i)))
    }

    /// Concatenated input of one dataset row.
    pub fn input_row(&self, ds: &CalibrationDataset, i: usize) -> Result<Vec<f64>> {
        Ok(self.column_refs(ds)?.iter().map(|r| r.get(ds, i)).collect())
    }

    /// Design matrix over the rows of `inputs`.
    pub fn design_matrix(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(inputs.nrows(), self.k());
        for i in 0..inputs.nrows() {
            let w: Vec<f64> = inputs.row(i).iter().copied().collect();
            for (j, f) in self.evaluate_inputs(&w).into_iter().enumerate() {
                h[(i, j)] = f;
            }
        }
        h
    }

    /// Whether any term has a non-zero exponent on variable `var`.
    pub fn uses_variable(&self, var: usize) -> bool {
        self.terms.iter().any(|t| t.0[var] > 0)
    }

    /// Sub-basis made of `term_idx` (in order) restricted to the variables
    /// `keep_vars` (indices into `labels`, always-included ones first). Every
    /// retained term must have zero exponent on dropped variables.
    pub fn select(&self, term_idx: &[usize], keep_vars: &[usize]) -> Result<PolynomialBasis> {
        let mut terms = Vec::with_capacity(term_idx.len());
        for &t in term_idx {
            let term = &self.terms[t];
            if (0..self.nvars()).any(|v| term.0[v] > 0 && !keep_vars.contains(&v)) {
                return Err(Error::DimensionMismatch(format!("term {} uses a dropped variable", self.term_name(t))));
            }
            terms.push(MultiIndex(keep_vars.iter().map(|&v| term.0[v]).collect()));
        }
        let d_x = keep_vars.iter().filter(|&&v| v < self.d_x).count();
        Ok(PolynomialBasis {
            labels: keep_vars.iter().map(|&v| self.labels[v].clone()).collect(),
            d_x,
            alpha: keep_vars.iter().filter(|&&v| v >= self.d_x).map(|&v| self.alpha[v - self.d_x]).collect(),
            p: self.p,
            terms,
            norm_mean: term_idx.iter().map(|&t| self.norm_mean[t]).collect(),
            norm_std: term_idx.iter().map(|&t| self.norm_std[t]).collect(),
        })
    }
}

/// Full basis over the targets of `train` and the interferents in `alpha`.
pub fn full_basis(train: &CalibrationDataset, alpha: &[usize], p: u32) -> Result<PolynomialBasis> {
    if let Some(&bad) = alpha.iter().find(|&&a| a >= train.d_z()) {
        return Err(Error::InvalidConfig(format!("interferent index {bad} out of range")));
    }
    let mut alpha = alpha.to_vec();
    alpha.sort_unstable();
    alpha.dedup();
    let labels: Vec<String> = train
        .x_names
        .iter()
        .cloned()
        .chain(alpha.iter().map(|&a| train.z_names[a].clone()))
        .collect();
    let inputs = DMatrix::from_fn(train.n(), labels.len(), |i, v| {
        if v < train.d_x() {
            train.x[(i, v)]
        } else {
            train.z[(i, alpha[v - train.d_x()])]
        }
    });
    PolynomialBasis::from_columns(labels, train.d_x(), alpha, p, &inputs)
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
