//! Pre-coding consistency screening.
//!
//! Two fixes run before any coder sees the data: a two-pass contradiction
//! check driven by a symptom hierarchy (a higher question answered one way
//! means a lower question was never asked, and a lower Yes implies its
//! generalization), and removal of causes that are physically impossible
//! given a record's sex/age indicators.

use std::collections::HashMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{CauseList, CondProbMatrix, Grid, SymptomMatrix, SymptomValue};

/// Name of the symptom that marks neonate records, used to decide when
/// neonate-only indicators must be cleared.
pub const DEFAULT_NEONATE_INDICATOR: &str = "neonate";

/// Sex/age indicator columns consulted by impossibility screening when
/// the caller does not name an explicit set.
pub const DEFAULT_DEMOGRAPHICS: &[&str] = &[
    "elder", "midage", "adult", "child", "under5", "infant", "neonate", "male", "female",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    /// `higher` at its trigger value means `symptom` was never asked.
    NoTask,
    /// `symptom` at its substantive value implies `higher` holds `implied`.
    Ancestor,
}

/// One hierarchy rule, by symptom name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRule {
    pub symptom: String,
    pub kind: RelationKind,
    pub higher: String,
    /// For NoTask: value of `higher` that suppresses `symptom`.
    /// For Ancestor: substantive value of `symptom` that fires the rule.
    pub trigger: SymptomValue,
    /// Value written to `higher` when an Ancestor rule fires.
    pub implied: SymptomValue,
    pub neonate_only: bool,
}

/// Symptom question-skip structure: which higher answers suppress which
/// lower questions, which lower answers imply which higher ones, and
/// which questions apply to neonates only.
#[derive(Debug, Clone)]
pub struct SymptomHierarchy {
    rules: Vec<HierarchyRule>,
    /// Substantive value per symptom (the answer that carries meaning,
    /// as opposed to "question not applicable"). Defaults to Yes.
    substantive: HashMap<String, SymptomValue>,
    neonate_only: Vec<String>,
    neonate_indicator: String,
}

impl SymptomHierarchy {
    pub fn new(rules: Vec<HierarchyRule>) -> Result<Self> {
        for r in &rules {
            if r.symptom == r.higher {
                return Err(VaError::Config(format!(
                    "symptom {:?} is its own ancestor",
                    r.symptom
                )));
            }
            if r.trigger == SymptomValue::Missing || r.implied == SymptomValue::Missing {
                return Err(VaError::Config(format!(
                    "rule for {:?} uses Missing as a trigger or implied value",
                    r.symptom
                )));
            }
        }

        // Each symptom must use one substantive value consistently: as
        // the trigger when it suppresses lower questions, and as the
        // firing value of its own Ancestor rules.
        let mut substantive: HashMap<String, SymptomValue> = HashMap::new();
        let mut declare = |name: &str, value: SymptomValue| -> Result<()> {
            match substantive.get(name) {
                Some(&v) if v != value => Err(VaError::Config(format!(
                    "symptom {:?} declared with conflicting substantive values",
                    name
                ))),
                _ => {
                    substantive.insert(name.to_string(), value);
                    Ok(())
                }
            }
        };
        for r in &rules {
            match r.kind {
                RelationKind::NoTask => declare(&r.higher, r.trigger)?,
                RelationKind::Ancestor => declare(&r.symptom, r.trigger)?,
            }
        }

        // Depth check over the combined lower→higher graph. Two passes
        // only resolve chains of length ≤ 2; reject anything deeper,
        // along with cycles.
        let mut edges: HashMap<&str, Vec<&str>> = HashMap::new();
        for r in &rules {
            edges.entry(r.symptom.as_str()).or_default().push(r.higher.as_str());
        }
        fn depth<'a>(
            node: &'a str,
            edges: &HashMap<&'a str, Vec<&'a str>>,
            visiting: &mut Vec<&'a str>,
            memo: &mut HashMap<&'a str, usize>,
        ) -> Result<usize> {
            if let Some(&d) = memo.get(node) {
                return Ok(d);
            }
            if visiting.contains(&node) {
                return Err(VaError::Config(format!(
                    "symptom {:?} is its own ancestor (cycle)",
                    node
                )));
            }
            visiting.push(node);
            let mut best = 0;
            if let Some(next) = edges.get(node) {
                for n in next {
                    best = best.max(1 + depth(n, edges, visiting, memo)?);
                }
            }
            visiting.pop();
            memo.insert(node, best);
            Ok(best)
        }
        let mut memo = HashMap::new();
        for node in edges.keys() {
            let d = depth(node, &edges, &mut Vec::new(), &mut memo)?;
            if d > 2 {
                return Err(VaError::Config(format!(
                    "hierarchy chain through {:?} is {} levels deep; two check passes only resolve 2",
                    node, d
                )));
            }
        }

        let mut neonate_only: Vec<String> = Vec::new();
        for r in &rules {
            if r.neonate_only && !neonate_only.contains(&r.symptom) {
                neonate_only.push(r.symptom.clone());
            }
        }

        Ok(SymptomHierarchy {
            rules,
            substantive,
            neonate_only,
            neonate_indicator: DEFAULT_NEONATE_INDICATOR.to_string(),
        })
    }

    /// Reads `symptom,relation,higher_symptom,trigger_value,implied_value,neonate_only`
    /// rows. Value cells accept `Y`/`Yes` and `N`/`No` (case-insensitive);
    /// an empty trigger or implied value defaults to Yes.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let expected = [
            "symptom",
            "relation",
            "higher_symptom",
            "trigger_value",
            "implied_value",
            "neonate_only",
        ];
        let headers = rdr.headers()?.clone();
        let header_vec: Vec<&str> = headers.iter().collect();
        if header_vec != expected {
            return Err(VaError::Config(format!(
                "hierarchy header must be {:?}, found {:?}",
                expected.join(","),
                header_vec.join(",")
            )));
        }
        let mut rules = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let kind = match &record[1] {
                "notask" => RelationKind::NoTask,
                "anc" => RelationKind::Ancestor,
                other => {
                    return Err(VaError::Config(format!(
                        "row {}: unknown relation {:?} (expected notask or anc)",
                        line + 2,
                        other
                    )))
                }
            };
            rules.push(HierarchyRule {
                symptom: record[0].to_string(),
                kind,
                higher: record[2].to_string(),
                trigger: parse_value_cell(&record[3], line + 2)?,
                implied: parse_value_cell(&record[4], line + 2)?,
                neonate_only: parse_flag_cell(&record[5], line + 2)?,
            });
        }
        Self::new(rules)
    }

    /// Overrides the column name used to recognize neonate records.
    pub fn with_neonate_indicator(mut self, name: impl Into<String>) -> Self {
        self.neonate_indicator = name.into();
        self
    }

    pub fn rules(&self) -> &[HierarchyRule] {
        &self.rules
    }

    /// The substantive value of a symptom; Yes unless declared otherwise.
    pub fn substantive_value(&self, symptom: &str) -> SymptomValue {
        self.substantive
            .get(symptom)
            .copied()
            .unwrap_or(SymptomValue::Yes)
    }

    pub fn neonate_only_symptoms(&self) -> &[String] {
        &self.neonate_only
    }

    pub fn neonate_indicator(&self) -> &str {
        &self.neonate_indicator
    }
}

fn parse_value_cell(cell: &str, line: usize) -> Result<SymptomValue> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "" | "y" | "yes" => Ok(SymptomValue::Yes),
        "n" | "no" => Ok(SymptomValue::No),
        other => Err(VaError::Config(format!(
            "row {}: value cell {:?} is not Y/Yes or N/No",
            line, other
        ))),
    }
}

fn parse_flag_cell(cell: &str, line: usize) -> Result<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" | "n" => Ok(false),
        "1" | "true" | "yes" | "y" => Ok(true),
        other => Err(VaError::Config(format!(
            "row {}: neonate_only cell {:?} is not a boolean",
            line, other
        ))),
    }
}

/// Which instrument's contradiction-handling rules to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckPolicy {
    /// Contradicted answers become No; no neonate clearing.
    InterVa4,
    /// Contradicted answers become Missing, but only when they currently
    /// hold their substantive value; neonate-only clearing applies.
    InterVa5,
    /// Contradicted answers become Missing unconditionally (absence and
    /// missingness are distinct downstream); neonate-only clearing applies.
    InSilico,
}

impl CheckPolicy {
    /// Value written over a contradicted answer.
    pub fn imputed_value(self) -> SymptomValue {
        match self {
            CheckPolicy::InterVa4 => SymptomValue::No,
            CheckPolicy::InterVa5 | CheckPolicy::InSilico => SymptomValue::Missing,
        }
    }

    /// Whether suppression fires only on substantive current values.
    pub fn gates_on_substantive(self) -> bool {
        matches!(self, CheckPolicy::InterVa5)
    }

    pub fn clears_neonate_only(self) -> bool {
        !matches!(self, CheckPolicy::InterVa4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChangeReason {
    /// A higher answer means this question was never asked.
    Contradiction { higher: String },
    /// A substantive lower answer implies this more general one.
    Implication { lower: String },
    /// Neonate-only question answered on a non-neonate record.
    NeonateOnly,
}

impl std::fmt::Display for ChangeReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChangeReason::Contradiction { higher } => write!(f, "contradicted by {}", higher),
            ChangeReason::Implication { lower } => write!(f, "implied by {}", lower),
            ChangeReason::NeonateOnly => write!(f, "neonate-only question on non-neonate"),
        }
    }
}

/// One cell whose final value differs from its input value. When a cell
/// is rewritten more than once, the entry keeps the last reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeLogEntry {
    pub record_id: String,
    pub record_index: usize,
    pub symptom: String,
    pub original: SymptomValue,
    pub updated: SymptomValue,
    pub reason: ChangeReason,
}

struct BoundRules {
    /// (lower index, rules touching it) in data column order.
    by_lower: Vec<(usize, Vec<BoundRule>)>,
    neonate_only: Vec<usize>,
    neonate_indicator: Option<usize>,
    /// Substantive value per column.
    substantive: Vec<SymptomValue>,
}

#[derive(Clone, Copy)]
struct BoundRule {
    kind: RelationKind,
    higher: usize,
    trigger: SymptomValue,
    implied: SymptomValue,
}

fn bind(hierarchy: &SymptomHierarchy, data: &SymptomMatrix) -> Result<BoundRules> {
    let index_of = |name: &str| -> Result<usize> {
        data.symptom_index(name).ok_or_else(|| {
            VaError::Config(format!(
                "hierarchy references symptom {:?} absent from the data",
                name
            ))
        })
    };
    let mut per_lower: HashMap<usize, Vec<BoundRule>> = HashMap::new();
    for r in hierarchy.rules() {
        let lower = index_of(&r.symptom)?;
        let higher = index_of(&r.higher)?;
        per_lower.entry(lower).or_default().push(BoundRule {
            kind: r.kind,
            higher,
            trigger: r.trigger,
            implied: r.implied,
        });
    }
    let mut by_lower: Vec<(usize, Vec<BoundRule>)> = per_lower.into_iter().collect();
    by_lower.sort_by_key(|(i, _)| *i);
    let neonate_only = hierarchy
        .neonate_only_symptoms()
        .iter()
        .map(|s| index_of(s))
        .collect::<Result<Vec<_>>>()?;
    let substantive = data
        .symptoms()
        .iter()
        .map(|s| hierarchy.substantive_value(s))
        .collect();
    Ok(BoundRules {
        by_lower,
        neonate_only,
        neonate_indicator: data.symptom_index(hierarchy.neonate_indicator()),
        substantive,
    })
}

/// Screens every record against the hierarchy: clears neonate-only
/// answers on non-neonate records (policies that ask for it), then runs
/// the suppress/imply loop twice so two-level chains settle.
///
/// Returns the corrected matrix and one log entry per net-changed cell,
/// ordered by record then column.
pub fn data_check(
    data: &SymptomMatrix,
    hierarchy: &SymptomHierarchy,
    policy: CheckPolicy,
) -> Result<(SymptomMatrix, Vec<ChangeLogEntry>)> {
    let bound = bind(hierarchy, data)?;

    let per_record: Vec<(Vec<SymptomValue>, Vec<(usize, RawReason)>)> = (0..data.n_records())
        .into_par_iter()
        .map(|i| check_record(data.record(i), &bound, policy))
        .collect();

    let name = |j: usize| data.symptoms()[j].clone();
    let mut rows = Vec::with_capacity(data.n_records());
    let mut log = Vec::new();
    for (i, (row, reasons)) in per_record.into_iter().enumerate() {
        for (j, reason) in reasons {
            if row[j] != data.value(i, j) {
                log.push(ChangeLogEntry {
                    record_id: data.ids()[i].clone(),
                    record_index: i,
                    symptom: name(j),
                    original: data.value(i, j),
                    updated: row[j],
                    reason: match reason {
                        RawReason::Contradiction(h) => {
                            ChangeReason::Contradiction { higher: name(h) }
                        }
                        RawReason::Implication(l) => ChangeReason::Implication { lower: name(l) },
                        RawReason::NeonateOnly => ChangeReason::NeonateOnly,
                    },
                });
            }
        }
        rows.push(row);
    }
    let checked = SymptomMatrix::from_rows(
        data.ids().to_vec(),
        data.symptoms().to_vec(),
        rows,
    )?;
    Ok((checked, log))
}

#[derive(Clone, Copy)]
enum RawReason {
    Contradiction(usize),
    Implication(usize),
    NeonateOnly,
}

/// One record's pass; returns the corrected row plus the last rewrite
/// reason per touched column (column order).
fn check_record(
    original: &[SymptomValue],
    bound: &BoundRules,
    policy: CheckPolicy,
) -> (Vec<SymptomValue>, Vec<(usize, RawReason)>) {
    let mut row = original.to_vec();
    let mut last_reason: HashMap<usize, RawReason> = HashMap::new();

    if policy.clears_neonate_only() {
        if let Some(ind) = bound.neonate_indicator {
            if row[ind] != SymptomValue::Yes {
                for &j in &bound.neonate_only {
                    if row[j] != SymptomValue::Missing {
                        row[j] = SymptomValue::Missing;
                        last_reason.insert(j, RawReason::NeonateOnly);
                    }
                }
            }
        }
    }

    for _pass in 0..2 {
        check_pass(&mut row, bound, policy, &mut last_reason);
    }

    let mut touched: Vec<(usize, RawReason)> = last_reason.into_iter().collect();
    touched.sort_by_key(|(j, _)| *j);
    (row, touched)
}

fn check_pass(
    row: &mut [SymptomValue],
    bound: &BoundRules,
    policy: CheckPolicy,
    last_reason: &mut HashMap<usize, RawReason>,
) {
    for (j, rules) in &bound.by_lower {
        let j = *j;
        // Suppression before implication: an answer invalidated by a
        // higher question must not propagate upward itself.
        for r in rules.iter().filter(|r| r.kind == RelationKind::NoTask) {
            if row[r.higher] == r.trigger {
                let gate_open = !policy.gates_on_substantive() || row[j] == bound.substantive[j];
                let imputed = policy.imputed_value();
                if gate_open && row[j] != imputed {
                    row[j] = imputed;
                    last_reason.insert(j, RawReason::Contradiction(r.higher));
                }
            }
        }
        for r in rules.iter().filter(|r| r.kind == RelationKind::Ancestor) {
            if row[j] == r.trigger && row[r.higher] != r.implied {
                row[r.higher] = r.implied;
                last_reason.insert(r.higher, RawReason::Implication(j));
            }
        }
    }
}

/// Result of impossibility screening: the surviving causes, their column
/// indices in the original table, and a per-record allowance mask over
/// the surviving causes.
#[derive(Debug, Clone)]
pub struct ImpossibilityScreen {
    pub causes: CauseList,
    pub retained_indices: Vec<usize>,
    pub removed: Vec<String>,
    /// N × retained; `false` means the cause is impossible for the record.
    pub mask: Grid<bool>,
}

impl ImpossibilityScreen {
    /// Mask row for one record.
    pub fn allowed(&self, record: usize) -> &[bool] {
        self.mask.row(record)
    }
}

/// The default demographic columns present in this dataset.
pub fn default_demographics(data: &SymptomMatrix) -> Vec<String> {
    DEFAULT_DEMOGRAPHICS
        .iter()
        .filter(|name| data.symptom_index(name).is_some())
        .map(|s| s.to_string())
        .collect()
}

/// A cause is impossible for a record when some demographic symptom the
/// record answers Yes has zero probability under that cause; it is
/// dropped from the cause list only when impossible for every record.
pub fn remove_impossible_causes(
    data: &SymptomMatrix,
    probs: &CondProbMatrix,
    demographics: &[String],
) -> Result<ImpossibilityScreen> {
    let mut pairs = Vec::new();
    for name in demographics {
        let d = data.symptom_index(name).ok_or_else(|| {
            VaError::Config(format!(
                "demographic symptom {:?} absent from the data",
                name
            ))
        })?;
        // A demographic column with no probability row constrains nothing.
        if let Some(p) = probs.symptoms().iter().position(|s| s == name) {
            pairs.push((d, p));
        }
    }

    let n = data.n_records();
    let c = probs.n_causes();
    let mut possible = Grid::filled(n, c, true);
    for i in 0..n {
        for &(d, p) in &pairs {
            if data.value(i, d) == SymptomValue::Yes {
                for k in 0..c {
                    if probs.prob(p, k) == 0.0 {
                        possible.set(i, k, false);
                    }
                }
            }
        }
    }

    let mut retained_indices = Vec::new();
    let mut removed = Vec::new();
    for k in 0..c {
        if (0..n).any(|i| *possible.get(i, k)) || n == 0 {
            retained_indices.push(k);
        } else {
            removed.push(probs.causes()[k].clone());
        }
    }
    if retained_indices.is_empty() {
        return Err(VaError::Validation(
            "every cause is impossible for every record; data and probability table are inconsistent"
                .into(),
        ));
    }
    let causes = CauseList::new(
        retained_indices
            .iter()
            .map(|&k| probs.causes()[k].clone())
            .collect(),
    )?;
    let mask = possible.select_columns(&retained_indices);
    Ok(ImpossibilityScreen {
        causes,
        retained_indices,
        removed,
        mask,
    })
}
