//! Tariff coder.
//!
//! Each (cause, symptom) pair gets a tariff: how unusual that symptom's
//! Yes count is for the cause, measured in robust units (median/IQR
//! across causes). A death's score for a cause sums the tariffs of its
//! Yes symptoms. Scores only order causes after comparison against
//! reference score pools drawn from a cause-balanced resample of the
//! training data; the coder emits ranks and a top cause, never
//! probabilities.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{CauseList, CSMFEstimate, Grid, SymptomMatrix, SymptomValue};
use crate::util::{iqr, median};

/// Tariff for one symptom across causes: centered by the median count
/// and scaled by the IQR. A symptom with zero spread carries no signal
/// and tariffs to 0 everywhere.
pub fn tariff_row(counts: &[f64]) -> Vec<f64> {
    let m = median(counts);
    let spread = iqr(counts);
    if spread == 0.0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&n| (n - m) / spread).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffModel {
    causes: Vec<String>,
    symptoms: Vec<String>,
    /// C×S tariff matrix.
    tariffs: Grid<f64>,
    /// C×S raw Yes counts the tariffs came from.
    counts: Grid<f64>,
    /// Per-cause sorted reference scores from the balanced resample.
    pools: Vec<Vec<f64>>,
}

impl TariffModel {
    pub fn causes(&self) -> &[String] {
        &self.causes
    }

    pub fn symptoms(&self) -> &[String] {
        &self.symptoms
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    pub fn tariff(&self, cause: usize, symptom: usize) -> f64 {
        *self.tariffs.get(cause, symptom)
    }

    pub fn pool(&self, cause: usize) -> &[f64] {
        &self.pools[cause]
    }
}

/// Trains tariffs and reference pools. The pools draw `bootstrap` records
/// per cause (with replacement, per-cause RNG streams off `seed`), so the
/// reference population has a uniform cause distribution regardless of
/// the training mix.
pub fn tariff_train(
    train: &SymptomMatrix,
    labels: &[String],
    causes: Option<&CauseList>,
    bootstrap: usize,
    seed: u64,
) -> Result<TariffModel> {
    if bootstrap == 0 {
        return Err(VaError::Config(
            "bootstrap pool size must be at least 1".into(),
        ));
    }
    let resolved = crate::training::resolve_labels(train, labels, causes)?;
    let cause_names = resolved.cause_names;
    let c = cause_names.len();
    let s = train.n_symptoms();
    let (yes, _) = crate::training::tally(train, &resolved.assignment, c);

    let mut counts = Grid::filled(c, s, 0.0f64);
    for j in 0..s {
        for k in 0..c {
            counts.set(k, j, *yes.get(j, k) as f64);
        }
    }
    let mut tariffs = Grid::filled(c, s, 0.0f64);
    for j in 0..s {
        let col: Vec<f64> = (0..c).map(|k| *counts.get(k, j)).collect();
        for (k, t) in tariff_row(&col).into_iter().enumerate() {
            tariffs.set(k, j, t);
        }
    }

    // Records per cause, for resampling.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &k) in resolved.assignment.iter().enumerate() {
        members[k].push(i);
    }

    let pools: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut pool = Vec::with_capacity(bootstrap);
            for _ in 0..bootstrap {
                let i = members[k][rng.random_range(0..members[k].len())];
                let score: f64 = train
                    .record(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == SymptomValue::Yes)
                    .map(|(j, _)| *tariffs.get(k, j))
                    .sum();
                pool.push(score);
            }
            pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pool
        })
        .collect();

    Ok(TariffModel {
        causes: cause_names,
        symptoms: train.symptoms().to_vec(),
        tariffs,
        counts,
        pools,
    })
}

/// Per-cause score for one record: the sum of tariffs over Yes symptoms.
/// No and Missing answers contribute nothing.
pub fn tariff_score(record: &[SymptomValue], model: &TariffModel) -> Result<Vec<f64>> {
    if record.len() != model.symptoms.len() {
        return Err(VaError::Validation(format!(
            "record has {} symptoms, model has {}",
            record.len(),
            model.symptoms.len()
        )));
    }
    let c = model.n_causes();
    let mut scores = vec![0.0f64; c];
    for (j, &v) in record.iter().enumerate() {
        if v == SymptomValue::Yes {
            for (k, score) in scores.iter_mut().enumerate() {
                *score += *model.tariffs.get(k, j);
            }
        }
    }
    Ok(scores)
}

/// Rank of each cause for a score vector: (1 + pool entries strictly
/// above the score) / pool size. Lower is more likely. Masked causes
/// rank infinitely bad.
pub fn tariff_rank(scores: &[f64], model: &TariffModel, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let c = model.n_causes();
    if scores.len() != c {
        return Err(VaError::Validation(format!(
            "{} scores for {} causes",
            scores.len(),
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
    let mut ranks = Vec::with_capacity(c);
    for k in 0..c {
        if mask.map_or(false, |m| !m[k]) {
            ranks.push(f64::INFINITY);
            continue;
        }
        let pool = &model.pools[k];
        // Pools are sorted ascending; entries after the partition point
        // are strictly greater.
        let above = pool.len() - pool.partition_point(|&x| x <= scores[k]);
        ranks.push((1.0 + above as f64) / pool.len() as f64);
    }
    Ok(ranks)
}

/// A coded dataset: scores, ranks, and the best-ranked cause per death.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffResults {
    pub ids: Vec<String>,
    pub causes: CauseList,
    pub scores: Grid<f64>,
    pub ranks: Grid<f64>,
    /// Index into `causes` of each record's top cause; rank ties keep
    /// cause-list order.
    pub top: Vec<usize>,
}

impl TariffResults {
    pub fn top_cause_name(&self, record: usize) -> &str {
        &self.causes.names()[self.top[record]]
    }
}

/// Scores and ranks every record. A record whose mask excludes all causes
/// is an error: Tariff has no undetermined category to absorb it.
pub fn tariff_code(
    data: &SymptomMatrix,
    model: &TariffModel,
    masks: Option<&Grid<bool>>,
) -> Result<TariffResults> {
    if let Some(m) = masks {
        if m.nrows() != data.n_records() || m.ncols() != model.n_causes() {
            return Err(VaError::Validation(format!(
                "mask grid is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                data.n_records(),
                model.n_causes()
            )));
        }
    }
    let per_record: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = (0..data.n_records())
        .into_par_iter()
        .map(|i| {
            let scores = tariff_score(data.record(i), model)?;
            let ranks = tariff_rank(&scores, model, masks.map(|m| m.row(i)))?;
            let mut best: Option<usize> = None;
            for (k, &r) in ranks.iter().enumerate() {
                if r.is_finite() && best.map_or(true, |b| r < ranks[b]) {
                    best = Some(k);
                }
            }
            let best = best.ok_or_else(|| {
                VaError::Validation(format!(
                    "record {:?}: every cause is excluded by the impossibility mask",
                    data.ids()[i]
                ))
            })?;
            Ok((scores, ranks, best))
        })
        .collect();

    let mut scores = Vec::with_capacity(data.n_records());
    let mut ranks = Vec::with_capacity(data.n_records());
    let mut top = Vec::with_capacity(data.n_records());
    for r in per_record {
        let (s, r, b) = r?;
        scores.push(s);
        ranks.push(r);
        top.push(b);
    }
    Ok(TariffResults {
        ids: data.ids().to_vec(),
        causes: CauseList::new(model.causes.clone())?,
        scores: Grid::from_rows(scores, model.n_causes())?,
        ranks: Grid::from_rows(ranks, model.n_causes())?,
        top,
    })
}

/// Population fractions by counting each death's top cause.
pub fn tariff_csmf(results: &TariffResults) -> Result<CSMFEstimate> {
    let n = results.ids.len();
    if n == 0 {
        return Err(VaError::Validation(
            "cannot aggregate fractions over zero records".into(),
        ));
    }
    let mut counts = vec![0usize; results.causes.len()];
    for &k in &results.top {
        counts[k] += 1;
    }
    CSMFEstimate::single(
        results.causes.names().to_vec(),
        counts.iter().map(|&m| m as f64 / n as f64).collect(),
    )
}
