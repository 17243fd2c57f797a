//! Format ingestion: WHO questionnaire exports, PHMRC gold-standard
//! tables, and custom dichotomous data all land in [`SymptomMatrix`].
//!
//! Parsers are pure per input; the only network touchpoint is
//! [`fetch::fetch_phmrc`].

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{Grid, SymptomMatrix, SymptomValue};

pub mod fetch;
pub mod phmrc;
pub mod who;

pub use fetch::fetch_phmrc;
pub use phmrc::{convert_phmrc, CutoffMode, PhmrcCutoffTable, PhmrcModule, PhmrcOptions};
pub use who::{parse_who2012, parse_who2016, WhoParsed};

/// Cell counts over an N×S matrix; always sums to N×S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub yes: usize,
    pub no: usize,
    pub missing: usize,
}

impl Tallies {
    pub fn from_matrix(matrix: &SymptomMatrix) -> Self {
        let (yes, no, missing) = matrix.tallies();
        Tallies { yes, no, missing }
    }

    pub fn total(&self) -> usize {
        self.yes + self.no + self.missing
    }
}

/// Token sets mapping arbitrary categorical answers onto the canonical
/// tri-state. The three sets are pairwise disjoint and nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    yes: Vec<String>,
    no: Vec<String>,
    missing: Vec<String>,
}

impl LabelMap {
    pub fn new(yes: Vec<String>, no: Vec<String>, missing: Vec<String>) -> Result<Self> {
        for (name, set) in [("yes", &yes), ("no", &no), ("missing", &missing)] {
            if set.is_empty() {
                return Err(VaError::Config(format!("empty {} label set", name)));
            }
        }
        for (a_name, a, b_name, b) in [
            ("yes", &yes, "no", &no),
            ("yes", &yes, "missing", &missing),
            ("no", &no, "missing", &missing),
        ] {
            if let Some(tok) = a.iter().find(|t| b.contains(t)) {
                return Err(VaError::Config(format!(
                    "token {:?} appears in both the {} and {} label sets",
                    tok, a_name, b_name
                )));
            }
        }
        Ok(LabelMap { yes, no, missing })
    }

    pub fn classify(&self, token: &str) -> Option<SymptomValue> {
        let matches = |set: &[String]| set.iter().any(|t| t == token);
        if matches(&self.yes) {
            Some(SymptomValue::Yes)
        } else if matches(&self.no) {
            Some(SymptomValue::No)
        } else if matches(&self.missing) {
            Some(SymptomValue::Missing)
        } else {
            None
        }
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            yes: vec!["Yes".into()],
            no: vec!["No".into()],
            missing: vec!["Don't know".into(), "Refused to answer".into()],
        }
    }
}

/// A rectangular table of raw string cells, header included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn to_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.header)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomParsed {
    pub matrix: SymptomMatrix,
    /// Present when the input carried a "Cause" column.
    pub causes: Option<Vec<String>>,
    /// Lenient mode only: cells outside every label set, mapped to Missing.
    pub unrecognized_tokens: usize,
}

/// Converts a curated categorical table (`ID[,Cause],symptom…`) into the
/// canonical matrix via a [`LabelMap`].
///
/// Strict mode fails on any token outside the three sets, listing
/// offenders; lenient mode maps them to Missing and counts them.
pub fn convert_custom<R: io::Read>(
    reader: R,
    labels: &LabelMap,
    strict: bool,
) -> Result<CustomParsed> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || header.get(0) != Some("ID") {
        return Err(VaError::Format(format!(
            "first column must be named \"ID\", found {:?}",
            header.get(0).unwrap_or("")
        )));
    }
    let cause_col = header.iter().position(|h| h == "Cause");
    let symptom_cols: Vec<usize> = (1..header.len()).filter(|c| Some(*c) != cause_col).collect();
    let symptoms: Vec<String> = symptom_cols
        .iter()
        .map(|&c| header.get(c).unwrap().to_string())
        .collect();

    let mut ids = Vec::new();
    let mut causes = Vec::new();
    let mut cells = Vec::new();
    let mut unrecognized = 0usize;
    let mut offenders: Vec<String> = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or("").to_string();
        if let Some(c) = cause_col {
            causes.push(record.get(c).unwrap_or("").to_string());
        }
        for &c in &symptom_cols {
            let token = record.get(c).unwrap_or("").trim();
            match labels.classify(token) {
                Some(v) => cells.push(v),
                None if strict => {
                    if offenders.len() < 5 {
                        offenders.push(format!(
                            "{:?} (row {}, column {:?})",
                            token,
                            row_no + 2,
                            header.get(c).unwrap()
                        ));
                    }
                    unrecognized += 1;
                    cells.push(SymptomValue::Missing);
                }
                None => {
                    unrecognized += 1;
                    cells.push(SymptomValue::Missing);
                }
            }
        }
        ids.push(id);
    }
    if strict && unrecognized > 0 {
        return Err(VaError::Format(format!(
            "{} cell(s) outside the yes/no/missing label sets, e.g. {}",
            unrecognized,
            offenders.join(", ")
        )));
    }

    let grid = Grid::from_flat(ids.len(), symptoms.len(), cells)?;
    let matrix = SymptomMatrix::new(ids, symptoms, grid)?;
    Ok(CustomParsed {
        matrix,
        causes: cause_col.map(|_| causes),
        unrecognized_tokens: unrecognized,
    })
}
