//! Calibration data model, CSV ingestion and train/test splitting.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    X,
    Z,
    Y,
    Time,
    Ignore,
}

/// `n` time samples of measured targets `x`, interferents `z` and sensor
/// outputs `y`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub y_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Timestamps in days, when known.
    pub time_index: Option<Vec<f64>>,
}

impl CalibrationDataset {
    pub fn new(
        x_names: Vec<String>,
        z_names: Vec<String>,
        y_names: Vec<String>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        y: DMatrix<f64>,
        time_index: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if z.nrows() != n || y.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "row counts differ: x {n}, z {}, y {}",
                z.nrows(),
                y.nrows()
            )));
        }
        if x_names.len() != x.ncols() || z_names.len() != z.ncols() || y_names.len() != y.ncols() {
            return Err(Error::InvalidDataset("label count does not match column count".into()));
        }
        if x_names.is_empty() || y_names.is_empty() {
            return Err(Error::InvalidDataset("at least one x and one y column are required".into()));
        }
        let mut seen = HashSet::new();
        for name in x_names.iter().chain(&z_names).chain(&y_names) {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate column label `{name}`")));
            }
        }
        for (label, m) in [("x", &x), ("z", &z), ("y", &y)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("non-finite value in {label}")));
            }
        }
        if let Some(t) = &time_index {
            if t.len() != n {
                return Err(Error::InvalidDataset("time index length differs from n".into()));
            }
            if t.windows(2).any(|w| !(w[1] >= w[0])) {
                return Err(Error::InvalidDataset("time index must be monotone".into()));
            }
        }
        Ok(CalibrationDataset { x_names, z_names, y_names, x, z, y, time_index })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.y.ncols()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn z_row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().copied().collect()
    }

    pub fn y_row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    /// Returns a new dataset made of the given rows, in order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> CalibrationDataset {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        CalibrationDataset {
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
            y_names: self.y_names.clone(),
            x: pick(&self.x),
            z: pick(&self.z),
            y: pick(&self.y),
            time_index: self.time_index.as_ref().map(|t| rows.iter().map(|&i| t[i]).collect()),
        }
    }

    pub fn z_index(&self, label: &str) -> Option<usize> {
        self.z_names.iter().position(|n| n == label)
    }

    pub fn y_index(&self, label: &str) -> Option<usize> {
        self.y_names.iter().position(|n| n == label)
    }

    /// Writes the dataset as CSV: optional `#` comment line, then a header
    /// `[time,] x.., z.., y..`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = Vec::new();
        if self.time_index.is_some() {
            header.push("time");
        }
        header.extend(self.x_names.iter().map(String::as_str));
        header.extend(self.z_names.iter().map(String::as_str));
        header.extend(self.y_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(t) = &self.time_index {
                rec.push(format!("{}", t[i]));
            }
            for m in [&self.x, &self.z, &self.y] {
                rec.extend(m.row(i).iter().map(|v| format!("{v}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), comment)
    }
}

/// Reads a dataset from a CSV file. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, role_map: &IndexMap<String, Role>) -> Result<CalibrationDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, role_map)
}

/// Parses comma-separated data with one header row. Lines starting with `#`
/// are comments. Columns are grouped by role in `role_map` order; columns
/// absent from the map are ignored. At most one column may carry the `time`
/// role.
pub fn read_csv<R: Read>(reader: R, role_map: &IndexMap<String, Role>) -> Result<CalibrationDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut cols: Vec<(usize, String, Role)> = Vec::new();
    for (label, role) in role_map {
        if *role == Role::Ignore {
            continue;
        }
        let idx = header
            .iter()
            .position(|h| h == label)
            .ok_or_else(|| Error::MissingColumn(label.clone()))?;
        cols.push((idx, label.clone(), *role));
    }
    if cols.iter().filter(|c| c.2 == Role::Time).count() > 1 {
        return Err(Error::InvalidConfig("at most one column may have the `time` role".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut vals = Vec::with_capacity(cols.len());
        for (idx, label, _) in &cols {
            let cell = rec.get(*idx).unwrap_or("");
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell { row: r + 1, col: label.clone() })?;
            vals.push(v);
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len();
    let gather = |role: Role| -> (Vec<String>, DMatrix<f64>) {
        let picked: Vec<usize> = (0..cols.len()).filter(|&c| cols[c].2 == role).collect();
        let names = picked.iter().map(|&c| cols[c].1.clone()).collect();
        let m = DMatrix::from_fn(n, picked.len(), |i, j| rows[i][picked[j]]);
        (names, m)
    };
    let (x_names, x) = gather(Role::X);
    let (z_names, z) = gather(Role::Z);
    let (y_names, y) = gather(Role::Y);
    let time_index = cols
        .iter()
        .position(|c| c.2 == Role::Time)
        .map(|c| rows.iter().map(|r| r[c]).collect());
    CalibrationDataset::new(x_names, z_names, y_names, x, z, y, time_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    RandomHalf,
    EvenOddDays,
    AlternatingDayPairs,
    EndsVsMiddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    #[serde(default)]
    pub seed: u64,
}

/// Row indices of the train and test parts for `spec`.
pub fn split_indices(ds: &CalibrationDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = ds.n();
    if spec.kind == SplitKind::RandomHalf {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(spec.seed, "split/random_half", 0));
        let n_train = n.div_ceil(2);
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        return Ok((train, test));
    }
    let name = match spec.kind {
        SplitKind::EvenOddDays => "even_odd_days",
        SplitKind::AlternatingDayPairs => "alternating_day_pairs",
        _ => "ends_vs_middle",
    };
    let t = ds.time_index.as_ref().ok_or(Error::MissingTimeIndex(name))?;
    // Day ordinal, 1-based from the first observed day.
    let first = t[0].floor();
    let day: Vec<i64> = t.iter().map(|v| (v.floor() - first) as i64 + 1).collect();
    let in_train: Box<dyn Fn(i64) -> bool> = match spec.kind {
        SplitKind::EvenOddDays => Box::new(|d| d % 2 == 0),
        SplitKind::AlternatingDayPairs => Box::new(|d| (d - 1) % 4 < 2),
        _ => {
            let days: Vec<i64> = day.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let ends: HashSet<i64> = days
                .iter()
                .take(10)
                .chain(days.iter().rev().take(10))
                .copied()
                .collect();
            Box::new(move |d| ends.contains(&d))
        }
    };
    let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train(day[i]));
    Ok((train, test))
}

/// Splits `ds` into `(train, test)`.
pub fn split(ds: &CalibrationDataset, spec: &SplitSpec) -> Result<(CalibrationDataset, CalibrationDataset)> {
    let (train, test) = split_indices(ds, spec)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roles(pairs: &[(&str, Role)]) -> IndexMap<String, Role> {
        pairs.iter().map(|(k, r)| (k.to_string(), *r)).collect()
    }

    fn daily(days: &[f64]) -> CalibrationDataset {
        let n = days.len();
        CalibrationDataset::new(
            vec!["x".into()],
            vec![],
            vec!["y".into()],
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            DMatrix::zeros(n, 0),
            DMatrix::from_fn(n, 1, |i, _| 2.0 * i as f64),
            Some(days.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn csv_roles_group_columns() {
        let text = "CO,T,S1\n1.0,20,0.5\n2.0,21,0.7\n3.0,19,0.9\n";
        let ds = read_csv(text.as_bytes(), &roles(&[("CO", Role::X), ("T", Role::Z), ("S1", Role::Y)])).unwrap();
        assert_eq!((ds.n(), ds.d_x(), ds.d_z(), ds.d_y()), (3, 1, 1, 1));
        assert_eq!(ds.z[(2, 0)], 19.0);
    }

    #[test]
    fn csv_rejects_nan_cell() {
        let text = "CO,T,S1\n1.0,NaN,0.5\n";
        let err = read_csv(text.as_bytes(), &roles(&[("CO", Role::X), ("T", Role::Z), ("S1", Role::Y)])).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell { row: 1, ref col } if col == "T"));
    }

    #[test]
    fn csv_rejects_missing_column() {
        let text = "CO,T,S1\n1.0,2,0.5\n";
        let err = read_csv(text.as_bytes(), &roles(&[("CO", Role::X), ("O3", Role::Z), ("S1", Role::Y)])).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "O3"));
    }

    #[test]
    fn csv_rejects_empty() {
        let err = read_csv("CO,S1\n".as_bytes(), &roles(&[("CO", Role::X), ("S1", Role::Y)])).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn csv_round_trip_with_comment_and_time() {
        let ds = daily(&[1.0, 1.5, 2.0]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, Some("provenance")).unwrap();
        let back = read_csv(&buf[..], &roles(&[("time", Role::Time), ("x", Role::X), ("y", Role::Y)])).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn even_odd_days_by_parity() {
        let ds = daily(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (tr, te) = split(&ds, &SplitSpec { kind: SplitKind::EvenOddDays, seed: 0 }).unwrap();
        assert_eq!(tr.time_index.unwrap(), vec![2.0, 4.0, 6.0]);
        assert_eq!(te.time_index.unwrap(), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn alternating_pairs() {
        let days: Vec<f64> = (1..=10).map(f64::from).collect();
        let (tr, _) = split(&daily(&days), &SplitSpec { kind: SplitKind::AlternatingDayPairs, seed: 0 }).unwrap();
        assert_eq!(tr.time_index.unwrap(), vec![1.0, 2.0, 5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn ends_vs_middle_keeps_seven_middle_days() {
        let days: Vec<f64> = (1..=27).map(f64::from).collect();
        let (tr, te) = split(&daily(&days), &SplitSpec { kind: SplitKind::EndsVsMiddle, seed: 0 }).unwrap();
        assert_eq!(te.time_index.unwrap(), (11..=17).map(f64::from).collect::<Vec<_>>());
        assert_eq!(tr.n(), 20);
    }

    #[test]
    fn temporal_split_needs_time() {
        let mut ds = daily(&[1.0, 2.0]);
        ds.time_index = None;
        let err = split(&ds, &SplitSpec { kind: SplitKind::EvenOddDays, seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::MissingTimeIndex(_)));
    }

    #[test]
    fn random_half_cardinality() {
        let ds = daily(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (tr, te) = split_indices(&ds, &SplitSpec { kind: SplitKind::RandomHalf, seed: 99 }).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        assert!(tr.iter().all(|i| !te.contains(i)));
    }

    proptest! {
        #[test]
        fn every_split_partitions_rows(n in 2usize..80, seed in any::<u64>(), kind in 0usize..4, step in 0.1f64..1.5) {
            let days: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * step).collect();
            let ds = daily(&days);
            let kind = [SplitKind::RandomHalf, SplitKind::EvenOddDays, SplitKind::AlternatingDayPairs, SplitKind::EndsVsMiddle][kind];
            let (tr, te) = split_indices(&ds, &SplitSpec { kind, seed }).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
