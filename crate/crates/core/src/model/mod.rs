//! Canonical data types shared by all coders.
//!
//! Every coder consumes a [`SymptomMatrix`] (tri-state cells) together with
//! a [`CondProbMatrix`] and produces an [`IndivProbResult`] and/or a
//! [`CSMFEstimate`]. Missingness is kept first-class here; coders that
//! treat missing as absent collapse it internally.

mod io;
mod validate;

pub use io::{read_symptom_csv, write_symptom_csv, CanonicalTable};
pub use validate::{align, validate_dataset, AlignedPair, Finding, ValidationReport};

use crate::error::{Result, VaError};
use serde::{Deserialize, Serialize};

/// One answer to one symptom/indicator question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymptomValue {
    Yes,
    No,
    Missing,
}

impl SymptomValue {
    /// Canonical file token: `"Y"`, `""`, `"."`.
    pub fn token(self) -> &'static str {
        match self {
            SymptomValue::Yes => "Y",
            SymptomValue::No => "",
            SymptomValue::Missing => ".",
        }
    }

    /// Parse a canonical token. Returns None for anything else.
    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "Y" => Some(SymptomValue::Yes),
            "" => Some(SymptomValue::No),
            "." => Some(SymptomValue::Missing),
            _ => None,
        }
    }
}

/// Dense row-major grid. Rows are records, columns are symptoms or causes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn from_rows(rows: Vec<Vec<T>>, cols: usize) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(VaError::Validation(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
        }
        let n = rows.len();
        Ok(Grid {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(VaError::Validation(format!(
                "flat grid data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// New grid keeping only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Grid<T> {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            for &c in cols {
                data.push(row[c].clone());
            }
        }
        Grid {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

/// N deaths by S tri-state symptom indicators, with unique record IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomMatrix {
    ids: Vec<String>,
    symptoms: Vec<String>,
    values: Grid<SymptomValue>,
}

impl SymptomMatrix {
    pub fn new(ids: Vec<String>, symptoms: Vec<String>, values: Grid<SymptomValue>) -> Result<Self> {
        if values.nrows() != ids.len() || values.ncols() != symptoms.len() {
            return Err(VaError::Validation(format!(
                "value grid is {}x{} but there are {} ids and {} symptoms",
                values.nrows(),
                values.ncols(),
                ids.len(),
                symptoms.len()
            )));
        }
        if let Some(dup) = first_duplicate(&symptoms) {
            return Err(VaError::Validation(format!(
                "duplicate symptom name {:?}",
                dup
            )));
        }
        Ok(SymptomMatrix {
            ids,
            symptoms,
            values,
        })
    }

    /// Build from per-row vectors. IDs need not be unique here;
    /// [`validate_dataset`] reports duplicates without failing.
    pub fn from_rows(
        ids: Vec<String>,
        symptoms: Vec<String>,
        rows: Vec<Vec<SymptomValue>>,
    ) -> Result<Self> {
        let grid = Grid::from_rows(rows, symptoms.len())?;
        Self::new(ids, symptoms, grid)
    }

    pub fn n_records(&self) -> usize {
        self.ids.len()
    }

    pub fn n_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn symptoms(&self) -> &[String] {
        &self.symptoms
    }

    pub fn symptom_index(&self, name: &str) -> Option<usize> {
        self.symptoms.iter().position(|s| s == name)
    }

    pub fn value(&self, record: usize, symptom: usize) -> SymptomValue {
        *self.values.get(record, symptom)
    }

    pub fn set_value(&mut self, record: usize, symptom: usize, value: SymptomValue) {
        self.values.set(record, symptom, value);
    }

    pub fn record(&self, record: usize) -> &[SymptomValue] {
        self.values.row(record)
    }

    pub fn records(&self) -> impl Iterator<Item = &[SymptomValue]> {
        self.values.rows_iter()
    }

    /// Copy restricted to the given symptom indices (in that order).
    pub fn select_symptoms(&self, indices: &[usize]) -> SymptomMatrix {
        SymptomMatrix {
            ids: self.ids.clone(),
            symptoms: indices.iter().map(|&i| self.symptoms[i].clone()).collect(),
            values: self.values.select_columns(indices),
        }
    }

    /// Yes/No/Missing cell tallies over the whole matrix.
    pub fn tallies(&self) -> (usize, usize, usize) {
        let mut yes = 0;
        let mut no = 0;
        let mut missing = 0;
        for v in &self.values.data {
            match v {
                SymptomValue::Yes => yes += 1,
                SymptomValue::No => no += 1,
                SymptomValue::Missing => missing += 1,
            }
        }
        (yes, no, missing)
    }
}

/// Ordered set of causes a coder may assign, plus the optional synthetic
/// category absorbing truncated probability mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseList {
    causes: Vec<String>,
    undetermined: Option<String>,
}

impl CauseList {
    pub fn new(causes: Vec<String>) -> Result<Self> {
        Self::with_undetermined(causes, None)
    }

    pub fn with_undetermined(causes: Vec<String>, undetermined: Option<String>) -> Result<Self> {
        if causes.len() < 2 {
            return Err(VaError::Validation(format!(
                "a cause list needs at least 2 causes, got {}",
                causes.len()
            )));
        }
        if let Some(dup) = first_duplicate(&causes) {
            return Err(VaError::Validation(format!("duplicate cause name {:?}", dup)));
        }
        if let Some(u) = &undetermined {
            if causes.iter().any(|c| c == u) {
                return Err(VaError::Validation(format!(
                    "undetermined label {:?} collides with a substantive cause",
                    u
                )));
            }
        }
        Ok(CauseList {
            causes,
            undetermined,
        })
    }

    pub fn len(&self) -> usize {
        self.causes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.causes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.causes
    }

    pub fn undetermined(&self) -> Option<&str> {
        self.undetermined.as_deref()
    }

    pub fn index_of(&self, cause: &str) -> Option<usize> {
        self.causes.iter().position(|c| c == cause)
    }
}

/// Where a conditional-probability matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Shipped with an instrument (physician-elicited tables).
    BuiltIn,
    /// Estimated from labeled training data.
    Trained,
    /// Translated between grade and numeric representations.
    Converted,
}

/// S-by-C matrix of P(symptom present | cause), optionally carrying the
/// letter grade each entry was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondProbMatrix {
    symptoms: Vec<String>,
    causes: Vec<String>,
    values: Grid<f64>,
    grades: Option<Grid<String>>,
    provenance: Provenance,
}

impl CondProbMatrix {
    pub fn new(
        symptoms: Vec<String>,
        causes: Vec<String>,
        values: Grid<f64>,
        grades: Option<Grid<String>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.nrows() != symptoms.len() || values.ncols() != causes.len() {
            return Err(VaError::Validation(format!(
                "probability grid is {}x{} but there are {} symptoms and {} causes",
                values.nrows(),
                values.ncols(),
                symptoms.len(),
                causes.len()
            )));
        }
        if let Some(g) = &grades {
            if g.nrows() != symptoms.len() || g.ncols() != causes.len() {
                return Err(VaError::Validation(
                    "grade grid dimensions do not match probability grid".into(),
                ));
            }
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                let v = *values.get(r, c);
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    return Err(VaError::Validation(format!(
                        "probability out of range at symptom {:?}, cause {:?}: {}",
                        symptoms[r], causes[c], v
                    )));
                }
            }
        }
        Ok(CondProbMatrix {
            symptoms,
            causes,
            values,
            grades,
            provenance,
        })
    }

    pub fn symptoms(&self) -> &[String] {
        &self.symptoms
    }

    pub fn causes(&self) -> &[String] {
        &self.causes
    }

    pub fn n_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    /// P(symptom j present | cause k).
    pub fn prob(&self, symptom: usize, cause: usize) -> f64 {
        *self.values.get(symptom, cause)
    }

    pub fn grade(&self, symptom: usize, cause: usize) -> Option<&str> {
        self.grades.as_ref().map(|g| g.get(symptom, cause).as_str())
    }

    pub fn has_grades(&self) -> bool {
        self.grades.is_some()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn grades(&self) -> Option<&Grid<String>> {
        self.grades.as_ref()
    }

    /// Copy restricted to the given symptom row indices (in that order).
    pub fn select_symptoms(&self, indices: &[usize]) -> CondProbMatrix {
        let mut rows = Vec::with_capacity(indices.len());
        let mut grade_rows = Vec::with_capacity(indices.len());
        for &i in indices {
            rows.push(self.values.row(i).to_vec());
            if let Some(g) = &self.grades {
                grade_rows.push(g.row(i).to_vec());
            }
        }
        CondProbMatrix {
            symptoms: indices.iter().map(|&i| self.symptoms[i].clone()).collect(),
            causes: self.causes.clone(),
            values: Grid::from_rows(rows, self.causes.len()).expect("row widths preserved"),
            grades: self
                .grades
                .as_ref()
                .map(|_| Grid::from_rows(grade_rows, self.causes.len()).expect("row widths preserved")),
            provenance: self.provenance,
        }
    }

    /// Copy restricted to the given cause column indices (in that order).
    pub fn select_causes(&self, indices: &[usize]) -> CondProbMatrix {
        CondProbMatrix {
            symptoms: self.symptoms.clone(),
            causes: indices.iter().map(|&i| self.causes[i].clone()).collect(),
            values: self.values.select_columns(indices),
            grades: self.grades.as_ref().map(|g| g.select_columns(indices)),
            provenance: self.provenance,
        }
    }
}

/// Tolerance for "sums to one" invariants on probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Prior cause-fraction vector; normalized to sum 1 at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCSMF {
    weights: Vec<f64>,
}

impl PriorCSMF {
    /// Normalizes nonnegative weights. Rejects negative entries and
    /// all-zero vectors.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(VaError::Validation("empty prior weight vector".into()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(VaError::Validation(
                "prior weights must be finite and nonnegative".into(),
            ));
        }
        let mut weights = weights;
        if !crate::util::normalize(&mut weights) {
            return Err(VaError::Validation("prior weights sum to zero".into()));
        }
        Ok(PriorCSMF { weights })
    }

    pub fn uniform(n: usize) -> Self {
        PriorCSMF {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Per-cell posterior quantile summaries for an [`IndivProbResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummaries {
    pub mean: Grid<f64>,
    pub median: Grid<f64>,
    pub lower: Grid<f64>,
    pub upper: Grid<f64>,
    /// Credible level the lower/upper quantiles correspond to.
    pub level: f64,
}

/// Per-death cause distributions: N rows over C (or C+1 with the
/// undetermined column) causes, each row summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndivProbResult {
    ids: Vec<String>,
    causes: CauseList,
    point: Grid<f64>,
    quantiles: Option<QuantileSummaries>,
}

impl IndivProbResult {
    pub fn new(ids: Vec<String>, causes: CauseList, point: Grid<f64>) -> Result<Self> {
        let n_cols = causes.len() + usize::from(causes.undetermined().is_some());
        if point.nrows() != ids.len() || point.ncols() != n_cols {
            return Err(VaError::Validation(format!(
                "point grid is {}x{} but there are {} ids and {} cause columns",
                point.nrows(),
                point.ncols(),
                ids.len(),
                n_cols
            )));
        }
        for (r, row) in point.rows_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(VaError::Validation(format!(
                    "row {} ({}) sums to {}, not 1",
                    r, ids[r], sum
                )));
            }
        }
        Ok(IndivProbResult {
            ids,
            causes,
            point,
            quantiles: None,
        })
    }

    pub fn with_quantiles(mut self, q: QuantileSummaries) -> Result<Self> {
        for r in 0..self.point.nrows() {
            for c in 0..self.point.ncols() {
                let lo = *q.lower.get(r, c);
                let md = *q.median.get(r, c);
                let hi = *q.upper.get(r, c);
                if lo > md || md > hi {
                    return Err(VaError::Validation(format!(
                        "quantiles out of order at ({}, {}): {} / {} / {}",
                        r, c, lo, md, hi
                    )));
                }
            }
        }
        self.quantiles = Some(q);
        Ok(self)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn causes(&self) -> &CauseList {
        &self.causes
    }

    /// Column labels of the point matrix: substantive causes followed by
    /// the undetermined label when present.
    pub fn column_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.causes.names().iter().map(|s| s.as_str()).collect();
        if let Some(u) = self.causes.undetermined() {
            names.push(u);
        }
        names
    }

    pub fn n_records(&self) -> usize {
        self.ids.len()
    }

    pub fn n_columns(&self) -> usize {
        self.point.ncols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.point.row(r)
    }

    pub fn point(&self) -> &Grid<f64> {
        &self.point
    }

    pub fn quantiles(&self) -> Option<&QuantileSummaries> {
        self.quantiles.as_ref()
    }

    /// Column means of the point matrix. Errors on zero records.
    pub fn mean_distribution(&self) -> Result<Vec<f64>> {
        let n = self.n_records();
        if n == 0 {
            return Err(VaError::Validation(
                "cannot aggregate fractions over zero records".into(),
            ));
        }
        let mut sums = vec![0.0f64; self.n_columns()];
        for row in self.point.rows_iter() {
            for (k, &p) in row.iter().enumerate() {
                sums[k] += p;
            }
        }
        for s in &mut sums {
            *s /= n as f64;
        }
        Ok(sums)
    }
}

/// Per-cause uncertainty summary attached to a CSMF vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmfSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One sub-population's mortality-fraction estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmfGroup {
    pub label: String,
    /// Point estimate (posterior mean for sampled fits); sums to 1.
    pub point: Vec<f64>,
    pub summary: Option<CsmfSummary>,
}

/// Cause-specific mortality fractions, per sub-population.
///
/// Single-population fits use one group labeled [`CSMFEstimate::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CSMFEstimate {
    /// Column labels; may include an undetermined category.
    causes: Vec<String>,
    groups: Vec<CsmfGroup>,
}

impl CSMFEstimate {
    pub const ALL: &'static str = "ALL";

    pub fn new(causes: Vec<String>, groups: Vec<CsmfGroup>) -> Result<Self> {
        for g in &groups {
            if g.point.len() != causes.len() {
                return Err(VaError::Validation(format!(
                    "group {:?} has {} fractions for {} causes",
                    g.label,
                    g.point.len(),
                    causes.len()
                )));
            }
            let sum: f64 = g.point.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(VaError::Validation(format!(
                    "group {:?} fractions sum to {}, not 1",
                    g.label, sum
                )));
            }
        }
        Ok(CSMFEstimate { causes, groups })
    }

    pub fn single(causes: Vec<String>, point: Vec<f64>) -> Result<Self> {
        Self::new(
            causes,
            vec![CsmfGroup {
                label: Self::ALL.to_string(),
                point,
                summary: None,
            }],
        )
    }

    pub fn causes(&self) -> &[String] {
        &self.causes
    }

    pub fn groups(&self) -> &[CsmfGroup] {
        &self.groups
    }

    pub fn group(&self, label: &str) -> Option<&CsmfGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// The single group of a one-population estimate.
    pub fn sole_group(&self) -> Option<&CsmfGroup> {
        if self.groups.len() == 1 {
            Some(&self.groups[0])
        } else {
            None
        }
    }
}

fn first_duplicate(names: &[String]) -> Option<&String> {
    let mut seen = std::collections::HashSet::new();
    names.iter().find(|n| !seen.insert(n.as_str()))
}
