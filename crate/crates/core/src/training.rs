//! Shared bookkeeping for coders trained on labeled deaths.

use std::collections::HashMap;

use crate::error::{Result, VaError};
use crate::model::{CauseList, Grid, SymptomMatrix, SymptomValue};

/// Resolved training labels: the cause order and each record's cause
/// index. When `causes` is given it fixes the order and every cause must
/// have at least one record; otherwise causes appear in first-label
/// order.
pub(crate) struct ResolvedLabels {
    pub cause_names: Vec<String>,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
}

pub(crate) fn resolve_labels(
    train: &SymptomMatrix,
    labels: &[String],
    causes: Option<&CauseList>,
) -> Result<ResolvedLabels> {
    if labels.len() != train.n_records() {
        return Err(VaError::Training(format!(
            "{} labels for {} training records",
            labels.len(),
            train.n_records()
        )));
    }
    if let Some((i, _)) = labels.iter().enumerate().find(|(_, l)| l.is_empty()) {
        return Err(VaError::Training(format!(
            "training record {:?} has no cause label",
            train.ids()[i]
        )));
    }
    let cause_names: Vec<String> = match causes {
        Some(c) => c.names().to_vec(),
        None => {
            let mut seen = Vec::new();
            for l in labels {
                if !seen.contains(l) {
                    seen.push(l.clone());
                }
            }
            seen
        }
    };
    let index: HashMap<&str, usize> = cause_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut counts = vec![0usize; cause_names.len()];
    let mut assignment = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let k = *index.get(l.as_str()).ok_or_else(|| {
            VaError::Training(format!(
                "training record {:?} labeled {:?}, which is not in the cause list",
                train.ids()[i], l
            ))
        })?;
        counts[k] += 1;
        assignment.push(k);
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(VaError::Training(format!(
            "cause {:?} has no training records",
            cause_names[k]
        )));
    }
    Ok(ResolvedLabels {
        cause_names,
        assignment,
        counts,
    })
}

/// Per-(symptom, cause) Yes and answered tallies.
pub(crate) fn tally(
    train: &SymptomMatrix,
    assignment: &[usize],
    n_causes: usize,
) -> (Grid<usize>, Grid<usize>) {
    let s = train.n_symptoms();
    let mut yes = Grid::filled(s, n_causes, 0usize);
    let mut answered = Grid::filled(s, n_causes, 0usize);
    for (i, &k) in assignment.iter().enumerate() {
        for (j, &v) in train.record(i).iter().enumerate() {
            match v {
                SymptomValue::Yes => {
                    yes.set(j, k, yes.get(j, k) + 1);
                    answered.set(j, k, answered.get(j, k) + 1);
                }
                SymptomValue::No => answered.set(j, k, answered.get(j, k) + 1),
                SymptomValue::Missing => {}
            }
        }
    }
    (yes, answered)
}
