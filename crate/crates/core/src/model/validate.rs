//! Pre-coding sanity checks and data/probability-table alignment.

use std::collections::{HashMap, HashSet};

use crate::error::{Result, VaError};
use crate::model::{CondProbMatrix, SymptomMatrix, SymptomValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindingKind {
    /// Same ID on more than one record.
    DuplicateId,
    /// Symptom column with no Yes/No answer anywhere.
    AllMissingSymptom,
    /// Record with no Yes answer; presence-only coders see no evidence.
    NoPositiveRecord,
    EmptyDataset,
}

#[derive(Debug, Clone)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

/// Non-fatal observations about a dataset. Coders run regardless; the
/// CLI surfaces these before coding.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }
}

pub fn validate_dataset(matrix: &SymptomMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    if matrix.n_records() == 0 {
        report.findings.push(Finding {
            kind: FindingKind::EmptyDataset,
            message: "dataset has no records".into(),
        });
        return report;
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for id in matrix.ids() {
        *seen.entry(id.as_str()).or_insert(0) += 1;
    }
    let mut dups: Vec<&&str> = seen
        .iter()
        .filter(|(_, &n)| n > 1)
        .map(|(id, _)| id)
        .collect();
    dups.sort();
    for id in dups {
        report.findings.push(Finding {
            kind: FindingKind::DuplicateId,
            message: format!("ID {:?} appears {} times", id, seen[*id]),
        });
    }

    for (j, name) in matrix.symptoms().iter().enumerate() {
        let all_missing = (0..matrix.n_records())
            .all(|i| matrix.value(i, j) == SymptomValue::Missing);
        if all_missing {
            report.findings.push(Finding {
                kind: FindingKind::AllMissingSymptom,
                message: format!("symptom {:?} is missing on every record", name),
            });
        }
    }

    for (i, id) in matrix.ids().iter().enumerate() {
        let has_yes = matrix.record(i).iter().any(|&v| v == SymptomValue::Yes);
        if !has_yes {
            report.findings.push(Finding {
                kind: FindingKind::NoPositiveRecord,
                message: format!("record {:?} has no Yes answer", id),
            });
        }
    }

    report
}

/// A dataset and probability table restricted to their shared symptoms,
/// both in the probability table's symptom order.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub data: SymptomMatrix,
    pub probs: CondProbMatrix,
    /// Data columns with no probability row, in data order.
    pub dropped_data: Vec<String>,
    /// Probability rows with no data column, in table order.
    pub dropped_probs: Vec<String>,
}

/// Intersects data columns with probability rows by symptom name.
/// Errors when the intersection is empty; otherwise drops are reported,
/// never silently applied.
pub fn align(data: &SymptomMatrix, probs: &CondProbMatrix) -> Result<AlignedPair> {
    let data_names: HashSet<&str> = data.symptoms().iter().map(|s| s.as_str()).collect();
    let prob_names: HashSet<&str> = probs.symptoms().iter().map(|s| s.as_str()).collect();

    let mut shared_prob_idx = Vec::new();
    let mut dropped_probs = Vec::new();
    for (i, name) in probs.symptoms().iter().enumerate() {
        if data_names.contains(name.as_str()) {
            shared_prob_idx.push(i);
        } else {
            dropped_probs.push(name.clone());
        }
    }
    if shared_prob_idx.is_empty() {
        return Err(VaError::Alignment {
            data_symptoms: data.symptoms().to_vec(),
            prob_symptoms: probs.symptoms().to_vec(),
        });
    }

    let dropped_data: Vec<String> = data
        .symptoms()
        .iter()
        .filter(|s| !prob_names.contains(s.as_str()))
        .cloned()
        .collect();

    let data_idx: Vec<usize> = shared_prob_idx
        .iter()
        .map(|&i| {
            data.symptom_index(&probs.symptoms()[i])
                .expect("name came from the intersection")
        })
        .collect();

    Ok(AlignedPair {
        data: data.select_symptoms(&data_idx),
        probs: probs.select_symptoms(&shared_prob_idx),
        dropped_data,
        dropped_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Grid, Provenance};
    use SymptomValue::*;

    fn matrix(ids: &[&str], symptoms: &[&str], rows: Vec<Vec<SymptomValue>>) -> SymptomMatrix {
        SymptomMatrix::from_rows(
            ids.iter().map(|s| s.to_string()).collect(),
            symptoms.iter().map(|s| s.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    fn probs(symptoms: &[&str], causes: &[&str]) -> CondProbMatrix {
        let vals = Grid::filled(symptoms.len(), causes.len(), 0.5);
        CondProbMatrix::new(
            symptoms.iter().map(|s| s.to_string()).collect(),
            causes.iter().map(|s| s.to_string()).collect(),
            vals,
            None,
            Provenance::Trained,
        )
        .unwrap()
    }

    #[test]
    fn clean_dataset_has_no_findings() {
        let m = matrix(
            &["d1", "d2"],
            &["a", "b", "c"],
            vec![vec![Yes, No, Missing], vec![No, Yes, Yes]],
        );
        assert!(validate_dataset(&m).is_clean());
    }

    #[test]
    fn reports_each_problem_kind() {
        let m = matrix(
            &["d1", "d1", "d3"],
            &["a", "b"],
            vec![
                vec![Yes, Missing],
                vec![Yes, Missing],
                vec![No, Missing],
            ],
        );
        let r = validate_dataset(&m);
        assert_eq!(r.count(FindingKind::DuplicateId), 1);
        assert_eq!(r.count(FindingKind::AllMissingSymptom), 1);
        assert_eq!(r.count(FindingKind::NoPositiveRecord), 1);
        assert!(r.findings.iter().any(|f| f.message.contains("\"b\"")));
        assert!(r.findings.iter().any(|f| f.message.contains("\"d3\"")));
    }

    #[test]
    fn align_intersects_in_table_order() {
        let m = matrix(
            &["d1"],
            &["a", "b", "c"],
            vec![vec![Yes, No, Missing]],
        );
        let p = probs(&["b", "c", "d"], &["X", "Y"]);
        let pair = align(&m, &p).unwrap();
        assert_eq!(pair.data.symptoms(), ["b", "c"]);
        assert_eq!(pair.probs.symptoms(), ["b", "c"]);
        assert_eq!(pair.dropped_data, ["a"]);
        assert_eq!(pair.dropped_probs, ["d"]);
        assert_eq!(pair.data.value(0, 0), No);
    }

    #[test]
    fn align_identical_sets_drops_nothing() {
        let m = matrix(&["d1"], &["a", "b"], vec![vec![Yes, No]]);
        let p = probs(&["a", "b"], &["X", "Y"]);
        let pair = align(&m, &p).unwrap();
        assert!(pair.dropped_data.is_empty());
        assert!(pair.dropped_probs.is_empty());
        assert_eq!(pair.data, m);
    }

    #[test]
    fn align_disjoint_sets_errors() {
        let m = matrix(&["d1"], &["a"], vec![vec![Yes]]);
        let p = probs(&["z"], &["X", "Y"]);
        assert!(align(&m, &p).is_err());
    }
}
