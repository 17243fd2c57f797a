//! CSMF extraction, accuracy scoring, and cause-group aggregation.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{CSMFEstimate, CsmfGroup, IndivProbResult};
use crate::tariff::{tariff_csmf, TariffResults};

/// A coder's output, as far as reporting is concerned: either per-death
/// probability distributions, or Tariff's rank table.
#[derive(Debug, Clone, Copy)]
pub enum CoderOutput<'a> {
    Probs(&'a IndivProbResult),
    Tariff(&'a TariffResults),
}

/// Population CSMF of a coded result. With `include_undetermined`
/// unset, any undetermined column is dropped and the rest renormalized.
pub fn get_csmf(output: &CoderOutput, include_undetermined: bool) -> Result<CSMFEstimate> {
    match output {
        CoderOutput::Probs(result) => {
            let mut causes: Vec<String> =
                result.column_names().iter().map(|s| s.to_string()).collect();
            let mut point = result.mean_distribution()?;
            if !include_undetermined {
                if let Some(undet) = result.causes().undetermined() {
                    let idx = causes.iter().position(|c| c == undet).unwrap();
                    causes.remove(idx);
                    point.remove(idx);
                    let sum: f64 = point.iter().sum();
                    if sum <= 0.0 {
                        return Err(VaError::Validation(
                            "all estimated mass sits on the undetermined category".into(),
                        ));
                    }
                    for v in &mut point {
                        *v /= sum;
                    }
                }
            }
            CSMFEstimate::single(causes, point)
        }
        CoderOutput::Tariff(results) => tariff_csmf(results),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCod {
    pub id: String,
    pub cause: String,
    /// Probability for distribution coders; rank for Tariff (lower is
    /// stronger).
    pub score: f64,
}

/// Most likely cause per death. Ties keep cause-list order; for Tariff
/// the top cause is the minimum rank.
pub fn get_top_cod(output: &CoderOutput) -> Vec<TopCod> {
    match output {
        CoderOutput::Probs(result) => {
            let names = result.column_names();
            result
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let row = result.row(i);
                    let mut best = 0usize;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    TopCod {
                        id: id.clone(),
                        cause: names[best].to_string(),
                        score: row[best],
                    }
                })
                .collect()
        }
        CoderOutput::Tariff(results) => results
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let k = results.top[i];
                TopCod {
                    id: id.clone(),
                    cause: results.causes.names()[k].clone(),
                    score: *results.ranks.get(i, k),
                }
            })
            .collect(),
    }
}

/// Per-death distributions. Tariff assigns ranks, not probabilities, so
/// it cannot answer this.
pub fn get_indiv_prob<'a>(output: &CoderOutput<'a>) -> Result<&'a IndivProbResult> {
    match output {
        CoderOutput::Probs(result) => Ok(result),
        CoderOutput::Tariff(_) => Err(VaError::Unsupported(
            "Tariff produces ranks, not per-death probability distributions".into(),
        )),
    }
}

/// What to do with an estimated undetermined mass before scoring
/// against a truth that has no such category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UndeterminedHandling {
    /// Drop the entry and renormalize the rest (default).
    Renormalize,
    /// Drop the entry and leave the rest as-is.
    DropMass,
}

/// CSMF accuracy: 1 − Σ|est−truth| / (2(1 − min truth)).
///
/// Both vectors must range over the same causes in the same order;
/// truth must be a distribution.
pub fn csmf_accuracy(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || est.len() < 2 {
        return Err(VaError::Validation(format!(
            "accuracy needs two same-length vectors over ≥2 causes, got {} and {}",
            est.len(),
            truth.len()
        )));
    }
    let sum: f64 = truth.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(VaError::Validation(format!(
            "truth CSMF sums to {}, expected 1",
            sum
        )));
    }
    if est.iter().chain(truth).any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) {
        return Err(VaError::Validation("fractions must lie in [0,1]".into()));
    }
    let min_truth = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let l1: f64 = est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum();
    Ok(1.0 - l1 / (2.0 * (1.0 - min_truth)))
}

/// Accuracy between named CSMFs: strips the undetermined entry from the
/// estimate per `handling`, then aligns the cause sets by name.
pub fn csmf_accuracy_aligned(
    est_causes: &[String],
    est: &[f64],
    truth_causes: &[String],
    truth: &[f64],
    undetermined: Option<&str>,
    handling: UndeterminedHandling,
) -> Result<f64> {
    if est_causes.len() != est.len() || truth_causes.len() != truth.len() {
        return Err(VaError::Validation("cause names and values differ in length".into()));
    }
    let mut causes: Vec<&String> = est_causes.iter().collect();
    let mut values: Vec<f64> = est.to_vec();
    if let Some(undet) = undetermined {
        if let Some(idx) = causes.iter().position(|c| c.as_str() == undet) {
            causes.remove(idx);
            values.remove(idx);
            if handling == UndeterminedHandling::Renormalize {
                let sum: f64 = values.iter().sum();
                if sum <= 0.0 {
                    return Err(VaError::Validation(
                        "all estimated mass sits on the undetermined category".into(),
                    ));
                }
                for v in &mut values {
                    *v /= sum;
                }
            }
        }
    }
    let mut aligned = Vec::with_capacity(truth_causes.len());
    for cause in truth_causes {
        match causes.iter().position(|c| *c == cause) {
            Some(i) => aligned.push(values[i]),
            None => {
                return Err(VaError::Validation(format!(
                    "estimate has no entry for cause {:?}",
                    cause
                )))
            }
        }
    }
    if let Some(extra) = causes.iter().find(|c| !truth_causes.contains(**c)) {
        return Err(VaError::Validation(format!(
            "estimated cause {:?} missing from the truth",
            extra
        )));
    }
    csmf_accuracy(&aligned, truth)
}

/// Empirical CSMF of labeled deaths over a fixed cause list;
/// zero-count causes stay in with mass 0.
pub fn empirical_csmf(labels: &[String], causes: &[String]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(VaError::Validation("no labeled deaths".into()));
    }
    let mut counts = vec![0usize; causes.len()];
    for label in labels {
        match causes.iter().position(|c| c == label) {
            Some(k) => counts[k] += 1,
            None => {
                return Err(VaError::Validation(format!(
                    "label {:?} is not in the cause list",
                    label
                )))
            }
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / labels.len() as f64).collect())
}

/// Fine-cause → display-group mapping with an optional explicit group
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseGrouping {
    pairs: Vec<(String, String)>,
    order: Option<Vec<String>>,
}

impl CauseGrouping {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(VaError::Config("empty cause grouping".into()));
        }
        for (i, (cause, _)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|(c, _)| c == cause) {
                return Err(VaError::Config(format!(
                    "cause {:?} grouped twice",
                    cause
                )));
            }
        }
        Ok(CauseGrouping { pairs, order: None })
    }

    /// Reads `cause,group` rows.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<&str> = rdr.headers()?.iter().collect();
        if header != ["cause", "group"] {
            return Err(VaError::Config(format!(
                "grouping header must be cause,group — found {:?}",
                header.join(",")
            )));
        }
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
        Self::new(pairs)
    }

    /// Appends the identity mapping for an undetermined category.
    pub fn with_undetermined(mut self, label: &str) -> Result<Self> {
        if self.pairs.iter().any(|(c, _)| c == label) {
            return Ok(self);
        }
        self.pairs.push((label.to_string(), label.to_string()));
        if let Some(order) = self.order.as_mut() {
            order.push(label.to_string());
        }
        Ok(self)
    }

    /// Fixes the output group order; must name every group exactly once.
    pub fn with_order(mut self, order: Vec<String>) -> Result<Self> {
        let groups = self.group_labels();
        for g in &groups {
            if !order.contains(g) {
                return Err(VaError::Config(format!("group {:?} missing from order", g)));
            }
        }
        for o in &order {
            if !groups.contains(o) {
                return Err(VaError::Config(format!(
                    "ordered group {:?} not present in the mapping",
                    o
                )));
            }
        }
        if order.len() != groups.len() {
            return Err(VaError::Config("group order has duplicates".into()));
        }
        self.order = Some(order);
        Ok(self)
    }

    pub fn group_of(&self, cause: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(c, _)| c == cause)
            .map(|(_, g)| g.as_str())
    }

    /// Output order: explicit order when set, else first appearance.
    pub fn group_labels(&self) -> Vec<String> {
        if let Some(order) = &self.order {
            return order.clone();
        }
        let mut out: Vec<String> = Vec::new();
        for (_, g) in &self.pairs {
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }
}

/// Collapses a CSMF to cause groups; mass is preserved exactly.
pub fn aggregate_csmf(est: &CSMFEstimate, grouping: &CauseGrouping) -> Result<CSMFEstimate> {
    let labels = grouping.group_labels();
    let mut groups = Vec::with_capacity(est.groups().len());
    for g in est.groups() {
        let mut point = vec![0.0f64; labels.len()];
        for (k, cause) in est.causes().iter().enumerate() {
            let group = grouping.group_of(cause).ok_or_else(|| {
                VaError::Validation(format!("cause {:?} is not covered by the grouping", cause))
            })?;
            let idx = labels.iter().position(|l| l == group).unwrap();
            point[idx] += g.point[k];
        }
        groups.push(CsmfGroup {
            label: g.label.clone(),
            point,
            summary: None,
        });
    }
    CSMFEstimate::new(labels, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CauseList, Grid};
    use approx::assert_abs_diff_eq;

    fn probs_result(undetermined: bool) -> IndivProbResult {
        let causes = if undetermined {
            CauseList::with_undetermined(
                vec!["Stroke".into(), "Pneumonia".into()],
                Some("Undetermined".into()),
            )
            .unwrap()
        } else {
            CauseList::new(vec!["Stroke".into(), "Pneumonia".into()]).unwrap()
        };
        let point = if undetermined {
            Grid::from_rows(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3]], 3).unwrap()
        } else {
            Grid::from_rows(vec![vec![0.7, 0.3], vec![0.2, 0.8]], 2).unwrap()
        };
        IndivProbResult::new(vec!["d1".into(), "d2".into()], causes, point).unwrap()
    }

    #[test]
    fn csmf_extraction_can_suppress_undetermined() {
        let result = probs_result(true);
        let with = get_csmf(&CoderOutput::Probs(&result), true).unwrap();
        assert_eq!(with.causes().len(), 3);
        let undet = with.sole_group().unwrap().point[2];
        assert_abs_diff_eq!(undet, 0.25, epsilon = 1e-12);

        let without = get_csmf(&CoderOutput::Probs(&result), false).unwrap();
        assert_eq!(without.causes(), ["Stroke", "Pneumonia"]);
        let p = &without.sole_group().unwrap().point;
        // (0.3, 0.45) renormalized
        assert_abs_diff_eq!(p[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn top_cod_breaks_ties_by_cause_order() {
        let causes = CauseList::new(vec!["A".into(), "B".into()]).unwrap();
        let point = Grid::from_rows(vec![vec![0.5, 0.5]], 2).unwrap();
        let result = IndivProbResult::new(vec!["d1".into()], causes, point).unwrap();
        let top = get_top_cod(&CoderOutput::Probs(&result));
        assert_eq!(top[0].cause, "A");
        assert_eq!(top[0].score, 0.5);
    }

    #[test]
    fn top_cod_is_scale_invariant() {
        let result = probs_result(false);
        let top = get_top_cod(&CoderOutput::Probs(&result));
        assert_eq!(top[0].cause, "Stroke");
        assert_eq!(top[1].cause, "Pneumonia");
    }

    #[test]
    fn indiv_prob_rejects_tariff() {
        let result = probs_result(false);
        assert!(get_indiv_prob(&CoderOutput::Probs(&result)).is_ok());
        let tariff = TariffResults {
            ids: vec!["d1".into()],
            causes: CauseList::new(vec!["A".into(), "B".into()]).unwrap(),
            scores: Grid::filled(1, 2, 0.0),
            ranks: Grid::from_rows(vec![vec![2.0, 1.0]], 2).unwrap(),
            top: vec![1],
        };
        let err = get_indiv_prob(&CoderOutput::Tariff(&tariff)).unwrap_err();
        assert!(matches!(err, VaError::Unsupported(_)));
        // but top-cause extraction works on ranks
        let top = get_top_cod(&CoderOutput::Tariff(&tariff));
        assert_eq!(top[0].cause, "B");
        assert_eq!(top[0].score, 1.0);
    }

    #[test]
    fn accuracy_formula_matches_hand_values() {
        assert_abs_diff_eq!(
            csmf_accuracy(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // est=(0.5,0.5), truth=(1,0): 1 − 1/(2·1) = 0.5
        assert_abs_diff_eq!(
            csmf_accuracy(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn accuracy_is_permutation_symmetric_and_bounded() {
        let est = [0.1, 0.2, 0.3, 0.4];
        let truth = [0.25, 0.25, 0.3, 0.2];
        let a = csmf_accuracy(&est, &truth).unwrap();
        let est_p = [0.4, 0.1, 0.3, 0.2];
        let truth_p = [0.2, 0.25, 0.3, 0.25];
        let b = csmf_accuracy(&est_p, &truth_p).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn accuracy_rejects_mismatched_sets() {
        let est_causes = vec!["A".to_string(), "B".into(), "Undetermined".into()];
        let truth_causes = vec!["A".to_string(), "B".into()];
        // undetermined dropped, renormalized: est (0.45,0.45,0.1) → (0.5,0.5)
        let acc = csmf_accuracy_aligned(
            &est_causes,
            &[0.45, 0.45, 0.1],
            &truth_causes,
            &[1.0, 0.0],
            Some("Undetermined"),
            UndeterminedHandling::Renormalize,
        )
        .unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        // drop-mass keeps (0.45, 0.45): 1 − (0.55+0.45)/2 = 0.5
        let acc = csmf_accuracy_aligned(
            &est_causes,
            &[0.45, 0.45, 0.1],
            &truth_causes,
            &[1.0, 0.0],
            Some("Undetermined"),
            UndeterminedHandling::DropMass,
        )
        .unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        // cause absent from estimate → error naming it
        let err = csmf_accuracy_aligned(
            &est_causes,
            &[0.5, 0.4, 0.1],
            &vec!["A".to_string(), "C".into()],
            &[0.5, 0.5],
            Some("Undetermined"),
            UndeterminedHandling::Renormalize,
        )
        .unwrap_err();
        assert!(err.to_string().contains("\"C\""));
    }

    #[test]
    fn empirical_truth_keeps_zero_count_causes() {
        let labels = vec!["A".to_string(), "A".into(), "B".into(), "A".into()];
        let causes = vec!["A".to_string(), "B".into(), "C".into()];
        let truth = empirical_csmf(&labels, &causes).unwrap();
        assert_abs_diff_eq!(truth[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(truth[1], 0.25, epsilon = 1e-12);
        assert_eq!(truth[2], 0.0);
        assert!(empirical_csmf(&vec!["X".to_string()], &causes).is_err());
    }

    #[test]
    fn aggregation_preserves_mass() {
        let est = CSMFEstimate::single(
            vec!["TB".into(), "AIDS".into(), "Stroke".into(), "Undetermined".into()],
            vec![0.3, 0.25, 0.35, 0.1],
        )
        .unwrap();
        let grouping = CauseGrouping::new(vec![
            ("TB".into(), "TB/AIDS".into()),
            ("AIDS".into(), "TB/AIDS".into()),
            ("Stroke".into(), "Circulatory".into()),
        ])
        .unwrap()
        .with_undetermined("Undetermined")
        .unwrap();
        let grouped = aggregate_csmf(&est, &grouping).unwrap();
        assert_eq!(grouped.causes(), ["TB/AIDS", "Circulatory", "Undetermined"]);
        let p = &grouped.sole_group().unwrap().point;
        assert_abs_diff_eq!(p[0], 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_grouping_is_a_no_op() {
        let est = CSMFEstimate::single(
            vec!["A".into(), "B".into()],
            vec![0.6, 0.4],
        )
        .unwrap();
        let grouping = CauseGrouping::new(vec![
            ("A".into(), "A".into()),
            ("B".into(), "B".into()),
        ])
        .unwrap();
        let grouped = aggregate_csmf(&est, &grouping).unwrap();
        assert_eq!(grouped.causes(), est.causes());
        assert_eq!(grouped.sole_group().unwrap().point, vec![0.6, 0.4]);
    }

    #[test]
    fn uncovered_cause_is_named() {
        let est = CSMFEstimate::single(vec!["A".into(), "B".into()], vec![0.6, 0.4]).unwrap();
        let grouping = CauseGrouping::new(vec![("A".into(), "G".into())]).unwrap();
        let err = aggregate_csmf(&est, &grouping).unwrap_err();
        assert!(err.to_string().contains("\"B\""));
    }

    #[test]
    fn explicit_group_order_is_validated_and_applied() {
        let grouping = CauseGrouping::new(vec![
            ("A".into(), "G1".into()),
            ("B".into(), "G2".into()),
        ])
        .unwrap();
        assert!(grouping
            .clone()
            .with_order(vec!["G2".into()])
            .is_err());
        assert!(grouping
            .clone()
            .with_order(vec!["G2".into(), "G3".into()])
            .is_err());
        let ordered = grouping.with_order(vec!["G2".into(), "G1".into()]).unwrap();
        let est = CSMFEstimate::single(vec!["A".into(), "B".into()], vec![0.6, 0.4]).unwrap();
        let grouped = aggregate_csmf(&est, &ordered).unwrap();
        assert_eq!(grouped.causes(), ["G2", "G1"]);
        assert_eq!(grouped.sole_group().unwrap().point, vec![0.4, 0.6]);
    }

    #[test]
    fn grouping_csv_and_duplicates() {
        let csv = "cause,group\nTB,TB/AIDS\nAIDS,TB/AIDS\n";
        let g = CauseGrouping::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(g.group_labels(), ["TB/AIDS"]);
        assert!(CauseGrouping::new(vec![
            ("A".into(), "G".into()),
            ("A".into(), "H".into()),
        ])
        .is_err());
    }
}
