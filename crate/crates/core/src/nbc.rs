//! Naive Bayes coder.
//!
//! Unlike the expert-prior coder, every symptom contributes a factor:
//! presence multiplies in P(s=1|cause), anything else multiplies in
//! P(s≠1|cause). Probabilities come from labeled training data with
//! Laplace smoothing, so no factor is ever exactly 0 or 1.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{
    CauseList, CondProbMatrix, CSMFEstimate, Grid, IndivProbResult, PriorCSMF, Provenance,
    SymptomMatrix, SymptomValue,
};

/// A trained classifier: smoothed conditional probabilities, a prior,
/// and the pseudo-count that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbcModel {
    probs: CondProbMatrix,
    prior: PriorCSMF,
    alpha: f64,
    /// Treat Missing like an absent answer (the stock rule). Disabling
    /// this skips missing symptoms entirely — an extension, not the
    /// published behavior.
    pub missing_as_absence: bool,
}

impl NbcModel {
    /// Wraps externally produced probabilities. Every entry must be
    /// strictly between 0 and 1, as smoothing would guarantee.
    pub fn new(probs: CondProbMatrix, prior: PriorCSMF, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(VaError::Config(format!(
                "smoothing pseudo-count must be positive, got {}",
                alpha
            )));
        }
        if prior.len() != probs.n_causes() {
            return Err(VaError::Validation(format!(
                "prior has {} weights for {} causes",
                prior.len(),
                probs.n_causes()
            )));
        }
        for j in 0..probs.n_symptoms() {
            for k in 0..probs.n_causes() {
                let p = probs.prob(j, k);
                if p <= 0.0 || p >= 1.0 {
                    return Err(VaError::Validation(format!(
                        "probability for symptom {:?} given {:?} is {}, outside (0,1)",
                        probs.symptoms()[j],
                        probs.causes()[k],
                        p
                    )));
                }
            }
        }
        Ok(NbcModel {
            probs,
            prior,
            alpha,
            missing_as_absence: true,
        })
    }

    pub fn probs(&self) -> &CondProbMatrix {
        &self.probs
    }

    pub fn prior(&self) -> &PriorCSMF {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Model restricted to a subset of the causes (renormalized prior).
    pub fn select_causes(&self, indices: &[usize]) -> Result<NbcModel> {
        let probs = self.probs.select_causes(indices);
        let prior = PriorCSMF::new(
            indices
                .iter()
                .map(|&k| self.prior.weights()[k])
                .collect(),
        )?;
        Ok(NbcModel {
            probs,
            prior,
            alpha: self.alpha,
            missing_as_absence: self.missing_as_absence,
        })
    }
}

/// Estimates the model from labeled deaths.
///
/// P(s=1|c) = (Yes + α) / (answered + 2α) per cause; the prior is the
/// smoothed cause frequency (count + α) / (N + Cα), or uniform on
/// request. `causes` fixes the output order; every named cause needs at
/// least one record.
pub fn nbc_train(
    train: &SymptomMatrix,
    labels: &[String],
    causes: Option<&CauseList>,
    alpha: f64,
    uniform_prior: bool,
) -> Result<NbcModel> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(VaError::Config(format!(
            "smoothing pseudo-count must be positive, got {}",
            alpha
        )));
    }
    let resolved = crate::training::resolve_labels(train, labels, causes)?;
    let cause_names = resolved.cause_names;
    let counts = resolved.counts;
    let c = cause_names.len();
    let (yes, answered) = crate::training::tally(train, &resolved.assignment, c);

    let s = train.n_symptoms();
    let mut smoothed = Grid::filled(s, c, 0.0f64);
    for j in 0..s {
        for k in 0..c {
            let p = (*yes.get(j, k) as f64 + alpha)
                / (*answered.get(j, k) as f64 + 2.0 * alpha);
            smoothed.set(j, k, p);
        }
    }
    let probs = CondProbMatrix::new(
        train.symptoms().to_vec(),
        cause_names,
        smoothed,
        None,
        Provenance::Trained,
    )?;

    let prior = if uniform_prior {
        PriorCSMF::uniform(c)
    } else {
        let n = labels.len() as f64;
        PriorCSMF::new(
            counts
                .iter()
                .map(|&m| (m as f64 + alpha) / (n + c as f64 * alpha))
                .collect(),
        )?
    };
    NbcModel::new(probs, prior, alpha)
}

/// Posterior over causes for one record: presence factors for Yes
/// answers, absence factors for everything else (Missing included,
/// unless the model opts out). `mask[k] = false` forces cause k out.
pub fn nbc_posterior(
    record: &[SymptomValue],
    model: &NbcModel,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let probs = &model.probs;
    let c = probs.n_causes();
    if record.len() != probs.n_symptoms() {
        return Err(VaError::Validation(format!(
            "record has {} symptoms, model has {}",
            record.len(),
            probs.n_symptoms()
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
        let mut lp = model.prior.weights()[k].ln();
        for (j, &v) in record.iter().enumerate() {
            match v {
                SymptomValue::Yes => lp += probs.prob(j, k).ln(),
                SymptomValue::No => lp += (1.0 - probs.prob(j, k)).ln(),
                SymptomValue::Missing => {
                    if model.missing_as_absence {
                        lp += (1.0 - probs.prob(j, k)).ln();
                    }
                }
            }
        }
        log_post[k] = lp;
    }
    // Smoothing keeps every factor positive, so mass can only vanish
    // when a mask excluded every cause; fall back to the prior.
    Ok(crate::util::normalized_from_log(&log_post)
        .unwrap_or_else(|| model.prior.weights().to_vec()))
}

/// Codes a dataset in parallel into per-death cause distributions.
pub fn nbc_code(
    data: &SymptomMatrix,
    model: &NbcModel,
    masks: Option<&Grid<bool>>,
) -> Result<IndivProbResult> {
    if let Some(m) = masks {
        if m.nrows() != data.n_records() || m.ncols() != model.probs.n_causes() {
            return Err(VaError::Validation(format!(
                "mask grid is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                data.n_records(),
                model.probs.n_causes()
            )));
        }
    }
    let rows: Vec<Result<Vec<f64>>> = (0..data.n_records())
        .into_par_iter()
        .map(|i| nbc_posterior(data.record(i), model, masks.map(|m| m.row(i))))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let causes = CauseList::new(model.probs.causes().to_vec())?;
    let point = Grid::from_rows(rows, causes.len())?;
    IndivProbResult::new(data.ids().to_vec(), causes, point)
}

/// Population fractions: the average of per-death posteriors.
pub fn nbc_csmf(results: &IndivProbResult) -> Result<CSMFEstimate> {
    let sums = results.mean_distribution()?;
    let names: Vec<String> = results
        .column_names()
        .into_iter()
        .map(|s| s.to_string())
        .collect();
    CSMFEstimate::single(names, sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interva::interva_posterior;
    use approx::assert_abs_diff_eq;
    use SymptomValue::*;

    fn model(symptoms: &[&str], causes: &[&str], rows: Vec<Vec<f64>>, prior: Vec<f64>) -> NbcModel {
        let probs = CondProbMatrix::new(
            symptoms.iter().map(|s| s.to_string()).collect(),
            causes.iter().map(|s| s.to_string()).collect(),
            Grid::from_rows(rows, causes.len()).unwrap(),
            None,
            Provenance::Trained,
        )
        .unwrap();
        NbcModel::new(probs, PriorCSMF::new(prior).unwrap(), 1.0).unwrap()
    }

    fn train_fixture(yes_for_k: usize, total: usize) -> (SymptomMatrix, Vec<String>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..total {
            rows.push(vec![if i < yes_for_k { Yes } else { No }]);
            labels.push("K".to_string());
        }
        rows.push(vec![No]);
        labels.push("L".to_string());
        let m = SymptomMatrix::from_rows(
            (0..=total).map(|i| format!("t{}", i)).collect(),
            vec!["s".into()],
            rows,
        )
        .unwrap();
        (m, labels)
    }

    #[test]
    fn smoothing_arithmetic() {
        let (m, labels) = train_fixture(7, 10);
        let nbc = nbc_train(&m, &labels, None, 1.0, false).unwrap();
        assert_abs_diff_eq!(nbc.probs().prob(0, 0), 8.0 / 12.0, epsilon = 1e-12);
        // Prior: (10+1)/(11+2) and (1+1)/(11+2).
        assert_abs_diff_eq!(nbc.prior().weights()[0], 11.0 / 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nbc.prior().weights()[1], 2.0 / 13.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_yes_count_stays_positive() {
        let (m, labels) = train_fixture(0, 10);
        let nbc = nbc_train(&m, &labels, None, 1.0, false).unwrap();
        assert_abs_diff_eq!(nbc.probs().prob(0, 0), 1.0 / 12.0, epsilon = 1e-12);
        assert!(nbc.probs().prob(0, 0) > 0.0);
    }

    #[test]
    fn zero_alpha_rejected() {
        let (m, labels) = train_fixture(3, 5);
        assert!(nbc_train(&m, &labels, None, 0.0, false).is_err());
        assert!(nbc_train(&m, &labels, None, -1.0, false).is_err());
    }

    #[test]
    fn uniform_prior_override() {
        let (m, labels) = train_fixture(3, 5);
        let nbc = nbc_train(&m, &labels, None, 1.0, true).unwrap();
        assert_eq!(nbc.prior().weights(), [0.5, 0.5]);
    }

    #[test]
    fn absence_factor_example() {
        let m = model(&["s"], &["c1", "c2"], vec![vec![0.9, 0.5]], vec![0.5, 0.5]);
        let post = nbc_posterior(&[No], &m, None).unwrap();
        assert_abs_diff_eq!(post[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(post[1], 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_contributes_absence_factor_by_default() {
        let m = model(&["s"], &["c1", "c2"], vec![vec![0.9, 0.5]], vec![0.5, 0.5]);
        let miss = nbc_posterior(&[Missing], &m, None).unwrap();
        let no = nbc_posterior(&[No], &m, None).unwrap();
        assert_eq!(miss, no);

        let mut skip = m.clone();
        skip.missing_as_absence = false;
        let skipped = nbc_posterior(&[Missing], &skip, None).unwrap();
        assert_eq!(skipped, vec![0.5, 0.5]);
    }

    #[test]
    fn symmetric_model_gives_uniform_posterior() {
        let m = model(
            &["a", "b"],
            &["c1", "c2"],
            vec![vec![0.7, 0.7], vec![0.2, 0.2]],
            vec![0.5, 0.5],
        );
        let post = nbc_posterior(&[Yes, Missing], &m, None).unwrap();
        assert_abs_diff_eq!(post[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dominant_presence_probability_wins_on_all_yes() {
        let m = model(
            &["a", "b"],
            &["c1", "c2"],
            vec![vec![0.99, 0.3], vec![0.95, 0.4]],
            vec![0.5, 0.5],
        );
        let post = nbc_posterior(&[Yes, Yes], &m, None).unwrap();
        assert!(post[0] > post[1]);
        // Brute force: 0.99*0.95 vs 0.3*0.4.
        let z = 0.99 * 0.95 + 0.3 * 0.4;
        assert_abs_diff_eq!(post[0], 0.99 * 0.95 / z, epsilon = 1e-12);
    }

    #[test]
    fn all_yes_record_matches_presence_only_coder() {
        let probs = CondProbMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["c1".into(), "c2".into(), "c3".into()],
            Grid::from_rows(
                vec![
                    vec![0.8, 0.2, 0.4],
                    vec![0.3, 0.6, 0.5],
                    vec![0.15, 0.25, 0.7],
                ],
                3,
            )
            .unwrap(),
            None,
            Provenance::Trained,
        )
        .unwrap();
        let prior = PriorCSMF::new(vec![0.2, 0.3, 0.5]).unwrap();
        let nbc = NbcModel::new(probs.clone(), prior.clone(), 1.0).unwrap();
        let rec = [Yes, Yes, Yes];
        let a = nbc_posterior(&rec, &nbc, None).unwrap();
        let b = interva_posterior(&rec, &probs, &prior, None).unwrap();
        for (x, y) in a.iter().zip(&b.dist) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn permutation_invariance_and_finiteness() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = model(
            &["a", "b", "c"],
            &["c1", "c2"],
            vec![vec![0.8, 0.2], vec![0.3, 0.6], vec![0.5, 0.1]],
            vec![0.4, 0.6],
        );
        let perm = model(
            &["c", "a", "b"],
            &["c1", "c2"],
            vec![vec![0.5, 0.1], vec![0.8, 0.2], vec![0.3, 0.6]],
            vec![0.4, 0.6],
        );
        for _ in 0..50 {
            let rec: Vec<SymptomValue> = (0..3)
                .map(|_| match rng.random_range(0..3) {
                    0 => Yes,
                    1 => No,
                    _ => Missing,
                })
                .collect();
            let p = nbc_posterior(&rec, &m, None).unwrap();
            assert!(p.iter().all(|x| x.is_finite()));
            let rotated = vec![rec[2], rec[0], rec[1]];
            let q = nbc_posterior(&rotated, &perm, None).unwrap();
            for (x, y) in p.iter().zip(&q) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mask_zeroes_excluded_cause() {
        let m = model(&["s"], &["c1", "c2"], vec![vec![0.6, 0.4]], vec![0.5, 0.5]);
        let post = nbc_posterior(&[Yes], &m, Some(&[false, true])).unwrap();
        assert_eq!(post[0], 0.0);
        assert_abs_diff_eq!(post[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csmf_is_mean_of_rows() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for _ in 0..7 {
            let mut r: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= z);
            rows.push(r);
        }
        let causes = CauseList::new(vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let res = IndivProbResult::new(
            (0..7).map(|i| format!("d{}", i)).collect(),
            causes,
            Grid::from_rows(rows.clone(), 3).unwrap(),
        )
        .unwrap();
        let est = nbc_csmf(&res).unwrap();
        let g = est.sole_group().unwrap();
        for k in 0..3 {
            let oracle: f64 = rows.iter().map(|r| r[k]).sum::<f64>() / 7.0;
            assert_abs_diff_eq!(g.point[k], oracle, epsilon = 1e-12);
        }
        let total: f64 = g.point.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn code_whole_dataset() {
        let (m, labels) = train_fixture(7, 10);
        let nbc = nbc_train(&m, &labels, None, 1.0, false).unwrap();
        let data = SymptomMatrix::from_rows(
            vec!["d1".into(), "d2".into()],
            vec!["s".into()],
            vec![vec![Yes], vec![Missing]],
        )
        .unwrap();
        let res = nbc_code(&data, &nbc, None).unwrap();
        assert_eq!(res.n_records(), 2);
        assert_eq!(res.causes().names(), ["K", "L"]);
        for r in 0..2 {
            let sum: f64 = res.row(r).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
    }
}
