//! Expert-prior Bayes coder.
//!
//! Conditional probabilities are expressed as letter grades (A+ = 0.8,
//! down to N = 0) shipped in tables or derived from training data. Each
//! death's posterior multiplies the prior cause fractions by the grade
//! value of every symptom answered Yes; absent and missing answers carry
//! no information. Post-processing truncates each posterior to its top
//! three causes above a floor and pools the rest as Undetermined.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{
    CauseList, CondProbMatrix, Grid, IndivProbResult, PriorCSMF, Provenance, SymptomMatrix,
    SymptomValue,
};

pub const UNDETERMINED: &str = "Undetermined";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub label: String,
    pub value: f64,
    /// Fraction of table cells expected to carry this grade; drives
    /// quantile conversion of trained probabilities.
    pub ref_fraction: f64,
}

/// Ordered letter-grade scale, values strictly decreasing in [0,1].
/// Every table must anchor A+ at 0.8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeTable {
    grades: Vec<Grade>,
}

impl GradeTable {
    pub fn new(grades: Vec<Grade>) -> Result<Self> {
        if grades.is_empty() {
            return Err(VaError::Config("empty grade table".into()));
        }
        for w in grades.windows(2) {
            if w[1].value >= w[0].value {
                return Err(VaError::Config(format!(
                    "grade values must strictly decrease: {:?}={} then {:?}={}",
                    w[0].label, w[0].value, w[1].label, w[1].value
                )));
            }
        }
        for g in &grades {
            if !(0.0..=1.0).contains(&g.value) || g.ref_fraction < 0.0 {
                return Err(VaError::Config(format!(
                    "grade {:?} has value {} / fraction {} out of range",
                    g.label, g.value, g.ref_fraction
                )));
            }
        }
        if !grades.iter().any(|g| g.label == "A+" && g.value == 0.8) {
            return Err(VaError::Config(
                "grade table must contain A+ valued 0.8".into(),
            ));
        }
        Ok(GradeTable { grades })
    }

    /// The 15-level scale used by the stock probability tables.
    pub fn standard() -> Self {
        let rows = [
            ("I", 1.0, 0.002),
            ("A+", 0.8, 0.015),
            ("A", 0.5, 0.035),
            ("A-", 0.2, 0.045),
            ("B+", 0.1, 0.06),
            ("B", 0.05, 0.08),
            ("B-", 0.02, 0.09),
            ("C+", 0.01, 0.10),
            ("C", 0.005, 0.11),
            ("C-", 0.002, 0.11),
            ("D+", 0.001, 0.10),
            ("D", 0.0005, 0.09),
            ("D-", 0.0001, 0.08),
            ("E", 0.00001, 0.06),
            ("N", 0.0, 0.023),
        ];
        GradeTable::new(
            rows.iter()
                .map(|&(label, value, ref_fraction)| Grade {
                    label: label.to_string(),
                    value,
                    ref_fraction,
                })
                .collect(),
        )
        .expect("standard table satisfies its own invariants")
    }

    /// Reads `grade,value[,ref_fraction]` rows, ordered high to low.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 2 || cols[0] != "grade" || cols[1] != "value" {
            return Err(VaError::Config(format!(
                "grade table header must start grade,value — found {:?}",
                cols.join(",")
            )));
        }
        let has_fraction = cols.get(2) == Some(&"ref_fraction");
        let mut grades = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let value: f64 = record[1].trim().parse().map_err(|_| {
                VaError::Config(format!("row {}: bad grade value {:?}", line + 2, &record[1]))
            })?;
            let ref_fraction = if has_fraction {
                record
                    .get(2)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| {
                            VaError::Config(format!(
                                "row {}: bad ref_fraction {:?}",
                                line + 2,
                                s
                            ))
                        })
                    })
                    .transpose()?
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            grades.push(Grade {
                label: record[0].trim().to_string(),
                value,
                ref_fraction,
            });
        }
        GradeTable::new(grades)
    }

    pub fn grades(&self) -> &[Grade] {
        &self.grades
    }

    pub fn value_of(&self, label: &str) -> Option<f64> {
        self.grades.iter().find(|g| g.label == label).map(|g| g.value)
    }

    /// Grade whose value is closest to `p`; ties go to the higher grade.
    pub fn nearest(&self, p: f64) -> &Grade {
        let mut best = &self.grades[0];
        for g in &self.grades[1..] {
            if (g.value - p).abs() < (best.value - p).abs() {
                best = g;
            }
        }
        best
    }

    /// Grade for a value holding percentile `pct` (fraction of cells
    /// strictly above it) under this table's reference fractions.
    fn grade_at_percentile(&self, pct: f64) -> Result<&Grade> {
        let total: f64 = self.grades.iter().map(|g| g.ref_fraction).sum();
        if total <= 0.0 {
            return Err(VaError::Config(
                "grade table has no reference fractions; quantile conversion unavailable".into(),
            ));
        }
        let mut cum = 0.0;
        for g in &self.grades {
            cum += g.ref_fraction / total;
            if pct < cum {
                return Ok(g);
            }
        }
        Ok(self.grades.last().expect("non-empty"))
    }
}

/// How trained symptom frequencies become table entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvertType {
    /// Map so each cell's rank percentile matches the reference grade mix.
    Quantile,
    /// Snap each frequency to the nearest grade value.
    Fixed,
    /// Use the raw frequencies unconverted.
    Empirical,
}

impl std::str::FromStr for ConvertType {
    type Err = VaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(ConvertType::Quantile),
            "fixed" => Ok(ConvertType::Fixed),
            "empirical" => Ok(ConvertType::Empirical),
            other => Err(VaError::Config(format!(
                "unknown convert type {:?} (expected quantile, fixed or empirical)",
                other
            ))),
        }
    }
}

/// Estimates P(symptom = Yes | cause) from labeled deaths.
///
/// The raw frequency is Yes / (Yes + No) per cause; symptoms never
/// answered for a cause get 0. `causes` fixes the output cause order and
/// must all appear in the labels; when None, causes appear in first-label
/// order.
pub fn train_condprob(
    train: &SymptomMatrix,
    labels: &[String],
    causes: Option<&CauseList>,
    table: &GradeTable,
    convert: ConvertType,
) -> Result<CondProbMatrix> {
    let resolved = crate::training::resolve_labels(train, labels, causes)?;
    let cause_names = resolved.cause_names;
    let (yes, answered) = crate::training::tally(train, &resolved.assignment, cause_names.len());

    let s = train.n_symptoms();
    let c = cause_names.len();
    let mut freq = Grid::filled(s, c, 0.0f64);
    for j in 0..s {
        for k in 0..c {
            let n = *answered.get(j, k);
            if n > 0 {
                freq.set(j, k, *yes.get(j, k) as f64 / n as f64);
            }
        }
    }

    let symptoms = train.symptoms().to_vec();
    match convert {
        ConvertType::Empirical => {
            CondProbMatrix::new(symptoms, cause_names, freq, None, Provenance::Trained)
        }
        ConvertType::Fixed => {
            let mut values = Grid::filled(s, c, 0.0f64);
            let mut grades = Grid::filled(s, c, String::new());
            for j in 0..s {
                for k in 0..c {
                    let g = table.nearest(*freq.get(j, k));
                    values.set(j, k, g.value);
                    grades.set(j, k, g.label.clone());
                }
            }
            CondProbMatrix::new(
                symptoms,
                cause_names,
                values,
                Some(grades),
                Provenance::Converted,
            )
        }
        ConvertType::Quantile => {
            let total = (s * c) as f64;
            let mut sorted: Vec<f64> = (0..s)
                .flat_map(|j| (0..c).map(move |k| (j, k)))
                .map(|(j, k)| *freq.get(j, k))
                .collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut values = Grid::filled(s, c, 0.0f64);
            let mut grades = Grid::filled(s, c, String::new());
            for j in 0..s {
                for k in 0..c {
                    let v = *freq.get(j, k);
                    // Ties share a percentile, hence a grade.
                    let above = sorted.partition_point(|&x| x > v);
                    let g = table.grade_at_percentile(above as f64 / total)?;
                    values.set(j, k, g.value);
                    grades.set(j, k, g.label.clone());
                }
            }
            CondProbMatrix::new(
                symptoms,
                cause_names,
                values,
                Some(grades),
                Provenance::Converted,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrevalenceLevel {
    High,
    Low,
    VeryLow,
}

impl std::str::FromStr for PrevalenceLevel {
    type Err = VaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(PrevalenceLevel::High),
            "l" => Ok(PrevalenceLevel::Low),
            "v" => Ok(PrevalenceLevel::VeryLow),
            other => Err(VaError::Config(format!(
                "unknown prevalence level {:?} (expected h, l or v)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervaVersion {
    V4_02,
    V4_03,
    V5,
}

impl std::str::FromStr for IntervaVersion {
    type Err = VaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4.02" => Ok(IntervaVersion::V4_02),
            "4.03" => Ok(IntervaVersion::V4_03),
            "5" => Ok(IntervaVersion::V5),
            other => Err(VaError::Config(format!(
                "unknown version {:?} (expected 4.02, 4.03 or 5)",
                other
            ))),
        }
    }
}

/// Coder knobs. The version selects which stock tables a caller loads;
/// it does not change the arithmetic here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervaConfig {
    pub version: IntervaVersion,
    pub hiv: PrevalenceLevel,
    pub malaria: PrevalenceLevel,
    /// Minimum probability a cause needs to survive truncation.
    pub floor: f64,
    /// When set, ranks 2–3 must also reach this fraction of the
    /// next-higher retained cause. Off by default: the stock behavior
    /// keeps every top-three cause at or above the floor.
    pub ratio_gate: Option<f64>,
    /// Prior multipliers for (high, low, very-low) prevalence.
    pub prevalence_factors: (f64, f64, f64),
}

impl Default for IntervaConfig {
    fn default() -> Self {
        IntervaConfig {
            version: IntervaVersion::V5,
            hiv: PrevalenceLevel::High,
            malaria: PrevalenceLevel::High,
            floor: 0.1,
            ratio_gate: None,
            prevalence_factors: (1.0, 0.05, 0.005),
        }
    }
}

impl IntervaConfig {
    pub fn factor(&self, level: PrevalenceLevel) -> f64 {
        match level {
            PrevalenceLevel::High => self.prevalence_factors.0,
            PrevalenceLevel::Low => self.prevalence_factors.1,
            PrevalenceLevel::VeryLow => self.prevalence_factors.2,
        }
    }
}

/// A prior with per-cause epidemic flags, as read from a prior file.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub causes: Vec<String>,
    pub prior: PriorCSMF,
    pub hiv_related: Vec<bool>,
    pub malaria_related: Vec<bool>,
}

impl PriorSpec {
    pub fn uniform(causes: Vec<String>) -> Self {
        let n = causes.len();
        PriorSpec {
            causes,
            prior: PriorCSMF::uniform(n),
            hiv_related: vec![false; n],
            malaria_related: vec![false; n],
        }
    }

    /// Scales HIV- and malaria-related causes by the configured
    /// prevalence factors and renormalizes.
    pub fn adjusted(&self, config: &IntervaConfig) -> Result<PriorCSMF> {
        let hiv = config.factor(config.hiv);
        let malaria = config.factor(config.malaria);
        let weights = self
            .prior
            .weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let mut w = w;
                if self.hiv_related[k] {
                    w *= hiv;
                }
                if self.malaria_related[k] {
                    w *= malaria;
                }
                w
            })
            .collect();
        PriorCSMF::new(weights)
    }
}

/// Reads `cause,weight[,hiv,malaria]` rows; flag cells take 0/1,
/// true/false, y/n or empty (false).
pub fn load_prior_csv<R: io::Read>(reader: R) -> Result<PriorSpec> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "cause" || cols[1] != "weight" {
        return Err(VaError::Config(format!(
            "prior header must start cause,weight — found {:?}",
            cols.join(",")
        )));
    }
    let hiv_col = cols.iter().position(|&c| c == "hiv");
    let malaria_col = cols.iter().position(|&c| c == "malaria");
    let parse_flag = |cell: Option<&str>, line: usize| -> Result<bool> {
        match cell.map(str::trim).unwrap_or("") {
            "" | "0" | "false" | "n" | "no" => Ok(false),
            "1" | "true" | "y" | "yes" => Ok(true),
            other => Err(VaError::Config(format!(
                "row {}: flag cell {:?} is not a boolean",
                line, other
            ))),
        }
    };
    let mut causes = Vec::new();
    let mut weights = Vec::new();
    let mut hiv = Vec::new();
    let mut malaria = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        causes.push(record[0].to_string());
        weights.push(record[1].trim().parse::<f64>().map_err(|_| {
            VaError::Config(format!("row {}: bad weight {:?}", line + 2, &record[1]))
        })?);
        hiv.push(parse_flag(hiv_col.and_then(|i| record.get(i)), line + 2)?);
        malaria.push(parse_flag(malaria_col.and_then(|i| record.get(i)), line + 2)?);
    }
    Ok(PriorSpec {
        prior: PriorCSMF::new(weights)?,
        causes,
        hiv_related: hiv,
        malaria_related: malaria,
    })
}

/// Reads a probability table: header `symptom,<cause...>`, cells either
/// all grade labels or all numbers.
pub fn load_probbase_csv<R: io::Read>(reader: R, table: &GradeTable) -> Result<CondProbMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || &headers[0] != "symptom" {
        return Err(VaError::Config(format!(
            "probability table header must start with symptom, found {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let causes: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    if causes.len() < 2 {
        return Err(VaError::Config(
            "probability table needs at least 2 cause columns".into(),
        ));
    }
    let mut symptoms = Vec::new();
    let mut value_rows: Vec<Vec<f64>> = Vec::new();
    let mut grade_rows: Vec<Vec<String>> = Vec::new();
    let mut graded: Option<bool> = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(VaError::Format(format!(
                "row {}: {} fields, header has {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        symptoms.push(record[0].to_string());
        let mut values = Vec::with_capacity(causes.len());
        let mut grades = Vec::with_capacity(causes.len());
        for cell in record.iter().skip(1) {
            let cell = cell.trim();
            let is_grade = cell.parse::<f64>().is_err();
            match graded {
                None => graded = Some(is_grade),
                Some(g) if g != is_grade => {
                    return Err(VaError::Format(format!(
                        "row {}: cell {:?} mixes grades and numbers in one table",
                        line + 2,
                        cell
                    )))
                }
                _ => {}
            }
            if is_grade {
                let v = table.value_of(cell).ok_or_else(|| {
                    VaError::Config(format!("row {}: unknown grade {:?}", line + 2, cell))
                })?;
                values.push(v);
                grades.push(cell.to_string());
            } else {
                values.push(cell.parse::<f64>().expect("checked above"));
            }
        }
        value_rows.push(values);
        grade_rows.push(grades);
    }
    let n = causes.len();
    let grades = if graded == Some(true) {
        Some(Grid::from_rows(grade_rows, n)?)
    } else {
        None
    };
    CondProbMatrix::new(
        symptoms,
        causes,
        Grid::from_rows(value_rows, n)?,
        grades,
        Provenance::BuiltIn,
    )
}

/// A single record's posterior over causes.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub dist: Vec<f64>,
    /// True when no cause had positive likelihood and the prior was
    /// returned unchanged.
    pub degenerate_evidence: bool,
}

/// Bayes posterior for one record: prior times the presence probability
/// of every Yes symptom, in log space. Absent/missing answers are
/// uninformative. `mask[k] = false` forces cause k out.
pub fn interva_posterior(
    record: &[SymptomValue],
    probs: &CondProbMatrix,
    prior: &PriorCSMF,
    mask: Option<&[bool]>,
) -> Result<Posterior> {
    let c = probs.n_causes();
    if record.len() != probs.n_symptoms() {
        return Err(VaError::Validation(format!(
            "record has {} symptoms, table has {}",
            record.len(),
            probs.n_symptoms()
        )));
    }
    if prior.len() != c {
        return Err(VaError::Validation(format!(
            "prior has {} weights for {} causes",
            prior.len(),
            c
        )));
    }
    if let Some(m) = mask {
        if m.len() != c {
            return Err(VaError::Validation(format!(
                "mask has {} entries for {} causes",
                m.len(),
                c
            )));
        }
    }

    let mut log_post = vec![0.0f64; c];
    for k in 0..c {
        if mask.map_or(false, |m| !m[k]) {
            log_post[k] = f64::NEG_INFINITY;
            continue;
        }
        let mut lp = prior.weights()[k].ln();
        for (j, &v) in record.iter().enumerate() {
            if v == SymptomValue::Yes {
                lp += probs.prob(j, k).ln();
            }
        }
        log_post[k] = lp;
    }

    match crate::util::normalized_from_log(&log_post) {
        Some(dist) => Ok(Posterior {
            dist,
            degenerate_evidence: false,
        }),
        None => Ok(Posterior {
            dist: prior.weights().to_vec(),
            degenerate_evidence: true,
        }),
    }
}

/// Truncates a posterior to its top three causes at or above the floor
/// (optionally also a fraction of the next-higher retained cause) and
/// pools the remainder as a trailing Undetermined entry.
pub fn interva_postprocess(dist: &[f64], config: &IntervaConfig) -> Vec<f64> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    // Stable: ties keep cause-list order.
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap());

    let mut keep = vec![false; dist.len()];
    let mut prev_kept: Option<f64> = None;
    for &k in order.iter().take(3) {
        if dist[k] < config.floor {
            break;
        }
        if let (Some(gate), Some(prev)) = (config.ratio_gate, prev_kept) {
            if dist[k] < gate * prev {
                break;
            }
        }
        keep[k] = true;
        prev_kept = Some(dist[k]);
    }

    let mut out = Vec::with_capacity(dist.len() + 1);
    let mut kept_mass = 0.0;
    for (k, &p) in dist.iter().enumerate() {
        if keep[k] {
            out.push(p);
            kept_mass += p;
        } else {
            out.push(0.0);
        }
    }
    out.push((1.0 - kept_mass).max(0.0));
    out
}

/// Codes a whole dataset: per-record posterior, truncation, and assembly
/// into an individual-probability result with an Undetermined column.
/// Returns the indices of records whose evidence excluded every cause.
pub fn interva_code(
    data: &SymptomMatrix,
    probs: &CondProbMatrix,
    prior: &PriorCSMF,
    config: &IntervaConfig,
    masks: Option<&Grid<bool>>,
) -> Result<(IndivProbResult, Vec<usize>)> {
    if let Some(m) = masks {
        if m.nrows() != data.n_records() || m.ncols() != probs.n_causes() {
            return Err(VaError::Validation(format!(
                "mask grid is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                data.n_records(),
                probs.n_causes()
            )));
        }
    }
    let posteriors: Vec<Result<Posterior>> = (0..data.n_records())
        .into_par_iter()
        .map(|i| interva_posterior(data.record(i), probs, prior, masks.map(|m| m.row(i))))
        .collect();

    let mut rows = Vec::with_capacity(data.n_records());
    let mut degenerate = Vec::new();
    for (i, p) in posteriors.into_iter().enumerate() {
        let p = p?;
        if p.degenerate_evidence {
            degenerate.push(i);
        }
        let mut row = interva_postprocess(&p.dist, config);
        // Guard the row-sum invariant against float drift.
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in &mut row {
                *v /= sum;
            }
        }
        rows.push(row);
    }

    let causes = CauseList::with_undetermined(
        probs.causes().to_vec(),
        Some(UNDETERMINED.to_string()),
    )?;
    let point = Grid::from_rows(rows, probs.n_causes() + 1)?;
    let result = IndivProbResult::new(data.ids().to_vec(), causes, point)?;
    Ok((result, degenerate))
}

/// Population fractions: the average of the truncated per-death
/// distributions, Undetermined column included.
pub fn interva_csmf(results: &IndivProbResult) -> Result<crate::model::CSMFEstimate> {
    let mut sums = results.mean_distribution()?;
    let total: f64 = sums.iter().sum();
    for s in &mut sums {
        *s /= total;
    }
    let names: Vec<String> = results
        .column_names()
        .into_iter()
        .map(|s| s.to_string())
        .collect();
    crate::model::CSMFEstimate::single(names, sums)
}
