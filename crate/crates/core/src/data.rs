//! Core data containers: survival datasets, covariate index sets, and
//! subject weight vectors.
//!
//! Covariate indices are 1-based everywhere in the public API; the first
//! column of the covariate matrix is covariate 1.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },
    #[error("dataset has no events")]
    NoEvents,
    #[error("all subjects belong to a single treatment arm")]
    SingleArm,
    #[error("non-positive follow-up time at row {row}")]
    NonPositiveTime { row: usize },
    #[error("indicator column {column} has non-0/1 value at row {row}")]
    NonBinaryIndicator { row: usize, column: String },
    #[error("mismatched lengths: {0}")]
    LengthMismatch(String),
    #[error("covariate index 0 is invalid; indices are 1-based")]
    ZeroIndex,
    #[error("covariate index {index} exceeds dataset width {width}")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("weight at position {position} is {value}; weights must be finite and non-negative")]
    InvalidWeight { position: usize, value: f64 },
    #[error("missing required column {0}")]
    MissingColumn(String),
    #[error("cannot parse value {value:?} at row {row}, column {column}")]
    InvalidValue { row: usize, column: String, value: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// An immutable observational survival dataset.
///
/// Holds the covariate matrix `x` (n rows, p columns), the binary treatment
/// indicator `z`, the observed follow-up time `time`, and the event
/// indicator `event` (1 = event, 0 = censored). Construction validates
/// every invariant; instances are never mutated afterwards.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    x: Array2<f64>,
    z: Vec<u8>,
    time: Vec<f64>,
    event: Vec<u8>,
}

impl SurvivalDataset {
    /// Validates the raw arrays and assembles a dataset.
    ///
    /// Requirements: all covariate values finite, `z` and `event` binary,
    /// strictly positive finite times, at least one event, and both
    /// treatment arms present.
    pub fn from_parts(
        x: Array2<f64>,
        z: Vec<u8>,
        time: Vec<f64>,
        event: Vec<u8>,
    ) -> Result<Self, DataError> {
        let n = x.nrows();
        if z.len() != n || time.len() != n || event.len() != n {
            return Err(DataError::LengthMismatch(format!(
                "x has {} rows but z/time/event have lengths {}/{}/{}",
                n,
                z.len(),
                time.len(),
                event.len()
            )));
        }
        for ((row, col), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    row,
                    column: format!("covariate {}", col + 1),
                });
            }
        }
        for (row, &t) in time.iter().enumerate() {
            if !t.is_finite() {
                return Err(DataError::NonFiniteValue { row, column: "time".into() });
            }
            if t <= 0.0 {
                return Err(DataError::NonPositiveTime { row });
            }
        }
        for (row, &zi) in z.iter().enumerate() {
            if zi > 1 {
                return Err(DataError::NonBinaryIndicator { row, column: "treatment".into() });
            }
        }
        for (row, &di) in event.iter().enumerate() {
            if di > 1 {
                return Err(DataError::NonBinaryIndicator { row, column: "event".into() });
            }
        }
        if !event.iter().any(|&d| d == 1) {
            return Err(DataError::NoEvents);
        }
        let treated = z.iter().filter(|&&zi| zi == 1).count();
        if treated == 0 || treated == n {
            return Err(DataError::SingleArm);
        }
        Ok(Self { x, z, time, event })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[u8] {
        &self.event
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&d| d == 1).count()
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&zi| zi == 1).count()
    }

    /// Copies covariate column `index` (1-based).
    pub fn covariate_column(&self, index: usize) -> Result<Vec<f64>, DataError> {
        if index == 0 {
            return Err(DataError::ZeroIndex);
        }
        if index > self.p() {
            return Err(DataError::IndexOutOfRange { index, width: self.p() });
        }
        Ok(self.x.column(index - 1).to_vec())
    }

    /// Restricts the dataset to the given rows, preserving order.
    /// Only validates shape, not arm/event composition, because subsets
    /// (for example cross-validation folds) may legitimately lack one arm.
    pub(crate) fn subset_rows(&self, rows: &[usize]) -> (Array2<f64>, Vec<u8>, Vec<f64>, Vec<u8>) {
        let mut x = Array2::zeros((rows.len(), self.p()));
        for (out, &r) in rows.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(r));
        }
        let z = rows.iter().map(|&r| self.z[r]).collect();
        let time = rows.iter().map(|&r| self.time[r]).collect();
        let event = rows.iter().map(|&r| self.event[r]).collect();
        (x, z, time, event)
    }
}

/// A sorted, duplicate-free set of 1-based covariate indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CovariateSet {
    indices: Vec<usize>,
}

impl CovariateSet {
    /// Builds a set from arbitrary 1-based indices; sorts and deduplicates.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self, DataError> {
        let mut set = BTreeSet::new();
        for i in indices {
            if i == 0 {
                return Err(DataError::ZeroIndex);
            }
            set.insert(i);
        }
        Ok(Self { indices: set.into_iter().collect() })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds the contiguous set `{1, ..., p}`.
    pub fn full(p: usize) -> Self {
        Self { indices: (1..=p).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn union(&self, other: &Self) -> Self {
        let set: BTreeSet<usize> =
            self.indices.iter().chain(other.indices.iter()).copied().collect();
        Self { indices: set.into_iter().collect() }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let indices = self.indices.iter().filter(|i| other.contains(**i)).copied().collect();
        Self { indices }
    }

    /// Number of indices shared with `other`.
    pub fn overlap(&self, other: &Self) -> usize {
        self.indices.iter().filter(|i| other.contains(**i)).count()
    }

    /// Checks that every index fits a dataset with `p` covariate columns.
    pub fn validate_for_width(&self, p: usize) -> Result<(), DataError> {
        match self.indices.last() {
            Some(&max) if max > p => Err(DataError::IndexOutOfRange { index: max, width: p }),
            _ => Ok(()),
        }
    }

    /// Iterates the 0-based column positions, for matrix extraction.
    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|i| i - 1)
    }

    /// Extracts the corresponding columns of `x` as an `n x |set|` matrix.
    pub fn extract_columns(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, DataError> {
        self.validate_for_width(x.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.len()));
        for (j, col) in self.zero_based().enumerate() {
            out.column_mut(j).assign(&x.column(col));
        }
        Ok(out)
    }
}

impl std::fmt::Display for CovariateSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Provenance of a subject weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Inverse probability of treatment weights, or unit weights.
    Iptw,
    /// Empirical-likelihood multiply robust weights.
    MultiplyRobust,
}

/// Per-subject analysis weights, finite and non-negative by construction.
#[derive(Debug, Clone)]
pub struct WeightVector {
    values: Vec<f64>,
    kind: WeightKind,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, kind: WeightKind) -> Result<Self, DataError> {
        for (position, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DataError::InvalidWeight { position, value });
            }
        }
        Ok(Self { values, kind })
    }

    /// Unit weights: an unweighted analysis.
    pub fn unit(n: usize) -> Self {
        Self { values: vec![1.0; n], kind: WeightKind::Iptw }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A dataset read from CSV together with its covariate column names.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub dataset: SurvivalDataset,
    pub covariate_names: Vec<String>,
}

/// Column-name bindings for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub time: String,
    pub event: String,
    pub treatment: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { time: "time".into(), event: "event".into(), treatment: "treatment".into() }
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    raw.trim().parse::<f64>().map_err(|_| DataError::InvalidValue {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_indicator(raw: &str, row: usize, column: &str) -> Result<u8, DataError> {
    let v = parse_cell(raw, row, column)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(DataError::NonBinaryIndicator { row, column: column.to_string() })
    }
}

/// Reads a survival dataset from CSV using the default column names
/// `time`, `event`, `treatment`; every other column is a covariate.
pub fn read_csv_dataset(path: impl AsRef<Path>) -> Result<CsvDataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv_dataset_from(file, &CsvSchema::default())
}

/// Reads a survival dataset from any reader with explicit column bindings.
pub fn read_csv_dataset_from<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<CsvDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let time_col = find(&schema.time)?;
    let event_col = find(&schema.event)?;
    let treat_col = find(&schema.treatment)?;
    let special = [time_col, event_col, treat_col];
    let covariate_cols: Vec<usize> =
        (0..headers.len()).filter(|c| !special.contains(c)).collect();
    let covariate_names: Vec<String> =
        covariate_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut x_rows: Vec<f64> = Vec::new();
    let mut z = Vec::new();
    let mut time = Vec::new();
    let mut event = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        time.push(parse_cell(&record[time_col], row, &schema.time)?);
        event.push(parse_indicator(&record[event_col], row, &schema.event)?);
        z.push(parse_indicator(&record[treat_col], row, &schema.treatment)?);
        for (&c, name) in covariate_cols.iter().zip(&covariate_names) {
            x_rows.push(parse_cell(&record[c], row, name)?);
        }
    }
    let n = time.len();
    let p = covariate_cols.len();
    let x = Array2::from_shape_vec((n, p), x_rows)
        .map_err(|e| DataError::LengthMismatch(e.to_string()))?;
    let dataset = SurvivalDataset::from_parts(x, z, time, event)?;
    Ok(CsvDataset { dataset, covariate_names })
}

/// Writes a dataset as CSV with columns `time,event,treatment,<covariates>`.
/// Numeric values use the shortest representation that round-trips.
pub fn write_csv_dataset<W: Write>(
    writer: W,
    data: &SurvivalDataset,
    covariate_names: Option<&[String]>,
) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let names: Vec<String> = match covariate_names {
        Some(names) => {
            if names.len() != data.p() {
                return Err(DataError::LengthMismatch(format!(
                    "{} covariate names for {} columns",
                    names.len(),
                    data.p()
                )));
            }
            names.to_vec()
        }
        None => (1..=data.p()).map(|j| format!("x{j}")).collect(),
    };
    let mut header = vec!["time".to_string(), "event".to_string(), "treatment".to_string()];
    header.extend(names);
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut record = vec![
            format!("{}", data.time()[i]),
            format!("{}", data.event()[i]),
            format!("{}", data.z()[i]),
        ];
        for j in 0..data.p() {
            record.push(format!("{}", data.x()[[i, j]]));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Weighted column means of a covariate matrix; helper shared by the
/// weighting and balance diagnostics code.
pub(crate) fn weighted_column_means(x: ArrayView2<'_, f64>, w: &[f64]) -> Array1<f64> {
    let total: f64 = w.iter().sum();
    let mut means = Array1::zeros(x.ncols());
    for j in 0..x.ncols() {
        let mut acc = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            acc += wi * x[[i, j]];
        }
        means[j] = acc / total;
    }
    means
}
