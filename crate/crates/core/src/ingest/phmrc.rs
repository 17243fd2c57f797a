//! Dichotomizing PHMRC gold-standard tables into binary symptoms.
//!
//! The mapping is data, not code: a cutoff table lists one rule per
//! output symptom (source column, comparator, numeric cutoff). `yes`
//! rules read categorical answers, the rest compare parsed numbers.
//! Adaptive mode re-estimates every numeric cutoff from the input as
//! the median of cause-specific means, so it needs cause labels.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::ingest::{RawTable, Tallies};
use crate::model::{Grid, SymptomMatrix, SymptomValue};

const ADULT_DEFAULT_CUTOFFS: &str = include_str!("../../data/phmrc_adult_cutoffs.csv");
/// Column count of the on-line adult gold-standard table.
pub const PHMRC_ADULT_COLUMNS: usize = 946;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhmrcModule {
    Adult,
    Child,
    Neonate,
}

impl PhmrcModule {
    /// Published width of the raw table, where known.
    pub fn expected_columns(self) -> Option<usize> {
        match self {
            PhmrcModule::Adult => Some(PHMRC_ADULT_COLUMNS),
            _ => None,
        }
    }
}

impl FromStr for PhmrcModule {
    type Err = VaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adult" => Ok(PhmrcModule::Adult),
            "child" => Ok(PhmrcModule::Child),
            "neonate" => Ok(PhmrcModule::Neonate),
            other => Err(VaError::Config(format!(
                "unknown module {:?}; expected adult, child, or neonate",
                other
            ))),
        }
    }
}

impl fmt::Display for PhmrcModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhmrcModule::Adult => "adult",
            PhmrcModule::Child => "child",
            PhmrcModule::Neonate => "neonate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffMode {
    /// Use the cutoffs as written in the table.
    Default,
    /// Re-estimate numeric cutoffs from the input's cause labels.
    Adapt,
}

impl FromStr for CutoffMode {
    type Err = VaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(CutoffMode::Default),
            "adapt" => Ok(CutoffMode::Adapt),
            other => Err(VaError::Config(format!(
                "unknown cutoff mode {:?}; expected default or adapt",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    /// Categorical yes/no answer taken at face value.
    Yes,
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl Comparator {
    pub fn is_numeric(self) -> bool {
        !matches!(self, Comparator::Yes)
    }

    fn holds(self, value: f64, cutoff: f64) -> bool {
        match self {
            Comparator::Yes => unreachable!("categorical rules never compare"),
            Comparator::Gt => value > cutoff,
            Comparator::Ge => value >= cutoff,
            Comparator::Lt => value < cutoff,
            Comparator::Le => value <= cutoff,
            Comparator::Eq => value == cutoff,
            Comparator::Ne => value != cutoff,
        }
    }
}

impl FromStr for Comparator {
    type Err = VaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yes" => Ok(Comparator::Yes),
            "gt" => Ok(Comparator::Gt),
            "ge" => Ok(Comparator::Ge),
            "lt" => Ok(Comparator::Lt),
            "le" => Ok(Comparator::Le),
            "eq" => Ok(Comparator::Eq),
            "ne" => Ok(Comparator::Ne),
            other => Err(VaError::Config(format!(
                "unknown comparator {:?}; expected yes, gt, ge, lt, le, eq, or ne",
                other
            ))),
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Yes => "yes",
            Comparator::Gt => "gt",
            Comparator::Ge => "ge",
            Comparator::Lt => "lt",
            Comparator::Le => "le",
            Comparator::Eq => "eq",
            Comparator::Ne => "ne",
        })
    }
}

/// One output symptom: where it reads from and how it fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRule {
    pub symptom: String,
    pub source_column: String,
    pub comparator: Comparator,
    /// Required for numeric comparators, absent for `yes`.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhmrcCutoffTable {
    rules: Vec<CutoffRule>,
}

impl PhmrcCutoffTable {
    pub fn new(rules: Vec<CutoffRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(VaError::Config("cutoff table has no rules".into()));
        }
        let mut seen = HashMap::new();
        for rule in &rules {
            if seen.insert(rule.symptom.clone(), ()).is_some() {
                return Err(VaError::Config(format!(
                    "symptom {:?} defined twice in cutoff table",
                    rule.symptom
                )));
            }
            match (rule.comparator.is_numeric(), rule.cutoff) {
                (true, None) => {
                    return Err(VaError::Config(format!(
                        "symptom {:?} uses comparator {} but has no cutoff",
                        rule.symptom, rule.comparator
                    )))
                }
                (true, Some(c)) if !c.is_finite() => {
                    return Err(VaError::Config(format!(
                        "symptom {:?} has non-finite cutoff",
                        rule.symptom
                    )))
                }
                (false, Some(_)) => {
                    return Err(VaError::Config(format!(
                        "categorical symptom {:?} must not carry a cutoff",
                        rule.symptom
                    )))
                }
                _ => {}
            }
        }
        Ok(PhmrcCutoffTable { rules })
    }

    /// Reads `symptom,source_column,comparator,cutoff` rows; `#` lines
    /// are comments.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let header: Vec<&str> = rdr.headers()?.iter().collect();
        if header != ["symptom", "source_column", "comparator", "cutoff"] {
            return Err(VaError::Config(format!(
                "cutoff table header must be symptom,source_column,comparator,cutoff — found {:?}",
                header.join(",")
            )));
        }
        let mut rules = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let comparator: Comparator = record[2].trim().parse()?;
            let cutoff_cell = record[3].trim();
            let cutoff = if cutoff_cell.is_empty() {
                None
            } else {
                Some(cutoff_cell.parse::<f64>().map_err(|_| {
                    VaError::Config(format!(
                        "cutoff {:?} for symptom {:?} is not a number",
                        cutoff_cell, &record[0]
                    ))
                })?)
            };
            rules.push(CutoffRule {
                symptom: record[0].to_string(),
                source_column: record[1].to_string(),
                comparator,
                cutoff,
            });
        }
        Self::new(rules)
    }

    pub fn to_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["symptom", "source_column", "comparator", "cutoff"])?;
        for rule in &self.rules {
            wtr.write_record([
                rule.symptom.as_str(),
                rule.source_column.as_str(),
                &rule.comparator.to_string(),
                &rule.cutoff.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// The bundled adult mapping (168 symptoms).
    pub fn default_adult() -> Self {
        Self::from_csv(ADULT_DEFAULT_CUTOFFS.as_bytes())
            .expect("bundled adult cutoff table is well-formed")
    }

    pub fn rules(&self) -> &[CutoffRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhmrcOptions {
    pub module: PhmrcModule,
    pub mode: CutoffMode,
    /// Name of the cause-of-death label column (e.g. "va34"). Required
    /// for adaptive cutoffs; optional otherwise.
    pub cause_column: Option<String>,
    /// Overrides the bundled table. Mandatory for child/neonate, which
    /// ship no default.
    pub cutoffs: Option<PhmrcCutoffTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedPhmrc {
    pub matrix: SymptomMatrix,
    pub causes: Option<Vec<String>>,
    /// First raw column, one entry per record.
    pub sites: Vec<String>,
    pub tallies: Tallies,
    pub unrecognized_tokens: usize,
    /// The table actually applied (adaptive cutoffs filled in).
    pub cutoffs: PhmrcCutoffTable,
}

/// Raw answers treated as missing without comment in either cell kind.
fn is_missing_token(token: &str) -> bool {
    let t = token.to_ascii_lowercase();
    t.is_empty()
        || t == "."
        || t == "na"
        || t == "don't know"
        || t == "dont know"
        || t == "refused to answer"
        || t == "refused"
}

fn classify_categorical(token: &str) -> (SymptomValue, bool) {
    let t = token.trim();
    match t.to_ascii_lowercase().as_str() {
        "yes" => (SymptomValue::Yes, false),
        "no" => (SymptomValue::No, false),
        _ if is_missing_token(t) => (SymptomValue::Missing, false),
        _ => (SymptomValue::Missing, true),
    }
}

fn classify_numeric(token: &str, comparator: Comparator, cutoff: f64) -> (SymptomValue, bool) {
    let t = token.trim();
    if is_missing_token(t) {
        return (SymptomValue::Missing, false);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => {
            if comparator.holds(v, cutoff) {
                (SymptomValue::Yes, false)
            } else {
                (SymptomValue::No, false)
            }
        }
        _ => (SymptomValue::Missing, true),
    }
}

/// Replaces every numeric cutoff with the median of cause-specific mean
/// values observed in `raw`. Columns with no parseable value keep their
/// default cutoff.
pub fn adapt_cutoffs(
    table: &PhmrcCutoffTable,
    raw: &RawTable,
    cause_column: &str,
) -> Result<PhmrcCutoffTable> {
    let cause_idx = raw.column(cause_column).ok_or_else(|| {
        VaError::Config(format!("cause column {:?} not found", cause_column))
    })?;
    for (i, row) in raw.rows.iter().enumerate() {
        if row[cause_idx].trim().is_empty() {
            return Err(VaError::Validation(format!(
                "adaptive cutoffs need every record labeled; row {} has an empty {:?} cell",
                i + 2,
                cause_column
            )));
        }
    }

    let mut rules = table.rules.clone();
    for rule in &mut rules {
        if !rule.comparator.is_numeric() {
            continue;
        }
        let Some(col) = raw.column(&rule.source_column) else {
            continue; // binding is checked in convert_phmrc
        };
        let mut by_cause: HashMap<&str, (f64, usize)> = HashMap::new();
        for row in &raw.rows {
            let token = row[col].trim();
            if is_missing_token(token) {
                continue;
            }
            if let Ok(v) = token.parse::<f64>() {
                if v.is_finite() {
                    let entry = by_cause.entry(row[cause_idx].trim()).or_insert((0.0, 0));
                    entry.0 += v;
                    entry.1 += 1;
                }
            }
        }
        if by_cause.is_empty() {
            continue;
        }
        let means: Vec<f64> = by_cause.values().map(|(sum, n)| sum / *n as f64).collect();
        rule.cutoff = Some(crate::util::median(&means));
    }
    PhmrcCutoffTable::new(rules)
}

/// Applies the cutoff table to a raw gold-standard table.
///
/// The first raw column is taken as site and IDs are assigned
/// sequentially from 1. Missingness never depends on cutoff values, so
/// default and adaptive runs tally identical Missing counts.
pub fn convert_phmrc(raw: &RawTable, opts: &PhmrcOptions) -> Result<ConvertedPhmrc> {
    let table = match &opts.cutoffs {
        Some(t) => t.clone(),
        None => match opts.module {
            PhmrcModule::Adult => PhmrcCutoffTable::default_adult(),
            other => {
                return Err(VaError::Config(format!(
                    "no bundled cutoff table for the {} module; supply one",
                    other
                )))
            }
        },
    };
    if let Some(expected) = opts.module.expected_columns() {
        if raw.header.len() != expected {
            return Err(VaError::Schema(format!(
                "{} table must have exactly {} columns, found {}",
                opts.module,
                expected,
                raw.header.len()
            )));
        }
    }
    if raw.header.is_empty() {
        return Err(VaError::Schema("raw table has no columns".into()));
    }

    let causes = match &opts.cause_column {
        Some(name) => {
            let idx = raw.column(name).ok_or_else(|| {
                VaError::Config(format!("cause column {:?} not found", name))
            })?;
            Some(raw.rows.iter().map(|r| r[idx].trim().to_string()).collect::<Vec<_>>())
        }
        None => None,
    };

    let table = match opts.mode {
        CutoffMode::Default => table,
        CutoffMode::Adapt => {
            let cause_column = opts.cause_column.as_deref().ok_or_else(|| {
                VaError::Config("adaptive cutoffs require a cause column".into())
            })?;
            adapt_cutoffs(&table, raw, cause_column)?
        }
    };

    let missing_sources: Vec<&str> = table
        .rules
        .iter()
        .filter(|r| raw.column(&r.source_column).is_none())
        .map(|r| r.source_column.as_str())
        .collect();
    if !missing_sources.is_empty() {
        return Err(VaError::Schema(format!(
            "source column(s) absent from raw table: {}",
            missing_sources.join(", ")
        )));
    }
    let bound: Vec<usize> = table
        .rules
        .iter()
        .map(|r| raw.column(&r.source_column).unwrap())
        .collect();

    let n = raw.rows.len();
    let mut cells = Vec::with_capacity(n * table.len());
    let mut unrecognized = 0usize;
    for row in &raw.rows {
        for (rule, &col) in table.rules.iter().zip(&bound) {
            let (value, odd) = match rule.comparator {
                Comparator::Yes => classify_categorical(&row[col]),
                cmp => classify_numeric(&row[col], cmp, rule.cutoff.unwrap()),
            };
            if odd {
                unrecognized += 1;
            }
            cells.push(value);
        }
    }

    let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let symptoms: Vec<String> = table.rules.iter().map(|r| r.symptom.clone()).collect();
    let grid = Grid::from_flat(n, symptoms.len(), cells)?;
    let matrix = SymptomMatrix::new(ids, symptoms, grid)?;
    let tallies = Tallies::from_matrix(&matrix);
    let sites = raw.rows.iter().map(|r| r[0].clone()).collect();

    Ok(ConvertedPhmrc {
        matrix,
        causes,
        sites,
        tallies,
        unrecognized_tokens: unrecognized,
        cutoffs: table,
    })
}
