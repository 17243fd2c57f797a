//! Bayesian hierarchical coder: joint posterior over cause
//! assignments and sub-population CSMFs.
//!
//! The generative model: each death's cause follows the group CSMF
//! π^(g) = softmax(θ^(g)); symptoms are Bernoulli given the cause with
//! probabilities from the conditional-probability matrix; θ entries are
//! Normal(μ, σ²) with diffuse hyperpriors. Yes and No answers both
//! contribute likelihood factors; Missing contributes nothing.
//! Inference is MCMC (see [`sampler`]); draws retained after burn-in
//! and thinning feed CSMF and per-death summaries.

mod diagnostics;
mod sampler;

pub use diagnostics::{insilico_convergence, ConvergenceReport, MIN_RETAINED};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{map_to_causes, CauseCategoryMap, DebiasResult};
use crate::error::{Result, VaError};
use crate::model::{
    CSMFEstimate, CauseList, CondProbMatrix, CsmfGroup, CsmfSummary, Grid, IndivProbResult,
    QuantileSummaries, SymptomMatrix, SymptomValue,
};
use crate::util::{mean, quantile_type7, variance};

use sampler::{run_chain, ChainSpec, LevelModel};

pub const MAX_DOUBLINGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsilicoConfig {
    /// Total sweeps before any auto-length doubling.
    pub nsim: usize,
    /// Fraction of sweeps discarded as burn-in.
    pub burn_in_fraction: f64,
    pub thin: usize,
    /// Double the chain (up to [`MAX_DOUBLINGS`] times) when the
    /// stationarity check fails.
    pub auto_length: bool,
    /// Credible level for interval summaries.
    pub ci: f64,
    pub seed: u64,
    pub mu_prior_mean: f64,
    pub mu_prior_variance: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    /// Initial random-walk scale for the θ updates.
    pub proposal_scale: f64,
    /// Re-draw the grade values (needs a graded probability matrix).
    pub reestimate_levels: bool,
    /// Keep per-death per-draw probabilities for individual summaries.
    pub keep_indiv_draws: bool,
}

impl Default for InsilicoConfig {
    fn default() -> Self {
        InsilicoConfig {
            nsim: 10_000,
            burn_in_fraction: 0.5,
            thin: 20,
            auto_length: false,
            ci: 0.95,
            seed: 1,
            mu_prior_mean: 0.0,
            mu_prior_variance: 100.0,
            sigma2_shape: 0.001,
            sigma2_scale: 0.001,
            proposal_scale: 1.0,
            reestimate_levels: false,
            keep_indiv_draws: true,
        }
    }
}

impl InsilicoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nsim == 0 {
            return Err(VaError::Config("nsim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(VaError::Config(format!(
                "burn-in fraction {} outside [0,1)",
                self.burn_in_fraction
            )));
        }
        if self.thin == 0 {
            return Err(VaError::Config("thinning must be at least 1".into()));
        }
        if self.retained() == 0 {
            return Err(VaError::Config(format!(
                "nsim {}, burn-in {} and thinning {} retain no draws",
                self.nsim,
                self.burn_in(),
                self.thin
            )));
        }
        if !(0.0 < self.ci && self.ci < 1.0) {
            return Err(VaError::Config(format!("CI level {} outside (0,1)", self.ci)));
        }
        for (name, v) in [
            ("mu prior variance", self.mu_prior_variance),
            ("sigma2 shape", self.sigma2_shape),
            ("sigma2 scale", self.sigma2_scale),
            ("proposal scale", self.proposal_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VaError::Config(format!("{} must be positive, got {}", name, v)));
            }
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.nsim as f64 * self.burn_in_fraction).floor() as usize
    }

    pub fn retained(&self) -> usize {
        (self.nsim - self.burn_in()) / self.thin
    }
}

/// Per-record cause priors from physician debiasing, plus optional hard
/// restrictions (the external-cause heuristic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPriors {
    /// N×C nonnegative weights; each row needs positive mass somewhere.
    pub weights: Grid<f64>,
    /// Per record: restrict sampling to these causes (None = no
    /// restriction).
    pub restrict_to: Vec<Option<Vec<usize>>>,
}

/// Everything retained from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub groups: Vec<String>,
    pub group_of: Vec<usize>,
    pub ids: Vec<String>,
    pub causes: Vec<String>,
    /// Per group: retained × C; every row sums to 1.
    pub csmf_draws: Vec<Grid<f64>>,
    /// Per retained draw: N × C; every row sums to 1.
    pub indiv_draws: Option<Vec<Grid<f64>>>,
    /// Post burn-in MH acceptance per group.
    pub acceptance: Vec<f64>,
    /// Posterior-mean grade values when re-estimated.
    pub levels: Option<Vec<(String, f64)>>,
    pub converged: bool,
    /// Stationarity test could not run (too few retained draws).
    pub inconclusive: bool,
    pub doublings: usize,
    /// Final chain length after any doubling.
    pub nsim: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub ci: f64,
}

impl PosteriorSample {
    pub fn retained(&self) -> usize {
        self.csmf_draws.first().map_or(0, Grid::nrows)
    }
}

/// Builds per-record group labels by concatenating column values with a
/// space, e.g. ("sex", "age") → "Women 60-".
pub fn subpop_labels(columns: &[(&str, &[String])], n_records: usize) -> Result<Vec<String>> {
    if columns.is_empty() {
        return Err(VaError::Config("no sub-population columns given".into()));
    }
    for (name, values) in columns {
        if values.len() != n_records {
            return Err(VaError::Config(format!(
                "sub-population column {:?} has {} values for {} records",
                name,
                values.len(),
                n_records
            )));
        }
    }
    Ok((0..n_records)
        .map(|i| {
            columns
                .iter()
                .map(|(_, values)| values[i].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

/// Turns debiased physician categories into per-record cause priors.
///
/// Deaths absent from the debias result get a flat prior. When an
/// external category is named and a death carries at least `threshold`
/// of its mass, sampling is restricted to that category's causes;
/// below the threshold the mass simply spreads over them.
pub fn physician_prior_grid(
    debias: &DebiasResult,
    map: &CauseCategoryMap,
    causes: &CauseList,
    data_ids: &[String],
    external_category: Option<&str>,
    threshold: f64,
) -> Result<RecordPriors> {
    let (mapped_causes, mapped) = map_to_causes(debias, map)?;
    let col_of: Vec<usize> = mapped_causes
        .iter()
        .map(|name| {
            causes.index_of(name).ok_or_else(|| {
                VaError::Config(format!(
                    "mapped cause {:?} is not in the coder's cause list",
                    name
                ))
            })
        })
        .collect::<Result<_>>()?;
    for name in causes.names() {
        if !mapped_causes.contains(name) {
            return Err(VaError::Config(format!(
                "cause {:?} has no entry in the cause-category mapping",
                name
            )));
        }
    }

    let external = match external_category {
        Some(label) => {
            let members: Vec<usize> = (0..map.causes().len())
                .filter(|&ci| map.category_of(ci) == label)
                .map(|ci| col_of[ci])
                .collect();
            if members.is_empty() {
                return Err(VaError::Config(format!(
                    "external category {:?} not present in the cause-category mapping",
                    label
                )));
            }
            Some((label.to_string(), members))
        }
        None => None,
    };

    let c = causes.len();
    let mut weights = Grid::filled(data_ids.len(), c, 1.0f64);
    let mut restrict_to: Vec<Option<Vec<usize>>> = vec![None; data_ids.len()];
    for (i, id) in data_ids.iter().enumerate() {
        let Some(row) = debias.death_ids.iter().position(|d| d == id) else {
            continue; // uncoded death keeps the flat prior
        };
        for k in 0..c {
            weights.set(i, k, 0.0);
        }
        for (ci, &col) in col_of.iter().enumerate() {
            weights.set(i, col, *mapped.get(row, ci));
        }
        if let Some((label, members)) = &external {
            if let Some(t) = debias.categories.iter().position(|cat| cat == label) {
                if *debias.posteriors.get(row, t) >= threshold {
                    restrict_to[i] = Some(members.clone());
                }
            }
        }
    }
    Ok(RecordPriors { weights, restrict_to })
}

/// Fits the model, honoring per-record impossibility masks and
/// optional physician priors, and doubling the chain on conclusive
/// non-convergence when `auto_length` is set.
pub fn insilico_fit(
    data: &SymptomMatrix,
    probs: &CondProbMatrix,
    config: &InsilicoConfig,
    groups: Option<&[String]>,
    priors: Option<&RecordPriors>,
    mask: Option<&Grid<bool>>,
) -> Result<PosteriorSample> {
    config.validate()?;
    if data.symptoms() != probs.symptoms() {
        return Err(VaError::Alignment {
            data_symptoms: data.symptoms().to_vec(),
            prob_symptoms: probs.symptoms().to_vec(),
        });
    }
    let n = data.n_records();
    let c = probs.n_causes();
    if n == 0 {
        return Err(VaError::Validation("no records to code".into()));
    }

    let (group_names, group_of) = match groups {
        Some(labels) => {
            if labels.len() != n {
                return Err(VaError::Config(format!(
                    "{} group labels for {} records",
                    labels.len(),
                    n
                )));
            }
            if let Some(i) = labels.iter().position(|l| l.trim().is_empty()) {
                return Err(VaError::Validation(format!(
                    "record {:?} has an empty sub-population label",
                    data.ids()[i]
                )));
            }
            let mut names: Vec<String> = labels.to_vec();
            names.sort();
            names.dedup();
            let group_of = labels
                .iter()
                .map(|l| names.iter().position(|n| n == l).unwrap())
                .collect();
            (names, group_of)
        }
        None => (vec!["ALL".to_string()], vec![0usize; n]),
    };

    // Effective mask: impossibility ∩ physician restriction.
    let mut allowed = match mask {
        Some(m) => {
            if m.nrows() != n || m.ncols() != c {
                return Err(VaError::Config(format!(
                    "mask is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    n,
                    c
                )));
            }
            m.clone()
        }
        None => Grid::filled(n, c, true),
    };
    if let Some(p) = priors {
        if p.weights.nrows() != n || p.weights.ncols() != c || p.restrict_to.len() != n {
            return Err(VaError::Config("prior dimensions do not match data".into()));
        }
        for i in 0..n {
            if let Some(members) = &p.restrict_to[i] {
                for k in 0..c {
                    if !members.contains(&k) {
                        allowed.set(i, k, false);
                    }
                }
            }
        }
    }
    for i in 0..n {
        if (0..c).all(|k| !*allowed.get(i, k)) {
            return Err(VaError::Validation(format!(
                "record {:?} has no possible cause left",
                data.ids()[i]
            )));
        }
    }
    let active: Vec<bool> = (0..c)
        .map(|k| (0..n).any(|i| *allowed.get(i, k)))
        .collect();
    if active.iter().filter(|&&a| a).count() < 2 {
        return Err(VaError::Validation(
            "fewer than 2 causes remain possible".into(),
        ));
    }

    // Likelihood: fixed table, or level counts when values are re-drawn.
    let (loglik, levels) = if config.reestimate_levels {
        (None, Some(build_level_model(data, probs)?))
    } else {
        (Some(fixed_loglik(data, probs)), None)
    };
    let log_prior = priors.map(|p| p.weights.clone());

    let mut nsim = config.nsim;
    let mut doublings = 0usize;
    loop {
        let spec = ChainSpec {
            n,
            c,
            n_groups: group_names.len(),
            group_of: &group_of,
            allowed: &allowed,
            active: &active,
            loglik: loglik.as_ref(),
            levels: levels.clone(),
            log_prior: log_prior.as_ref(),
            config,
            nsim,
        };
        let out = run_chain(&spec)?;
        let report =
            diagnostics::convergence_from_draws(&group_names, &data_causes(probs), &out.csmf_draws);
        let done = report.passed
            || report.inconclusive
            || !config.auto_length
            || doublings >= MAX_DOUBLINGS;
        if done {
            return Ok(PosteriorSample {
                groups: group_names,
                group_of,
                ids: data.ids().to_vec(),
                causes: data_causes(probs),
                csmf_draws: out.csmf_draws,
                indiv_draws: out.indiv_draws,
                acceptance: out.acceptance,
                levels: out.levels,
                converged: report.passed,
                inconclusive: report.inconclusive,
                doublings,
                nsim,
                burn_in: out.burn_in,
                thin: config.thin,
                seed: config.seed,
                ci: config.ci,
            });
        }
        doublings += 1;
        nsim *= 2;
    }
}

fn data_causes(probs: &CondProbMatrix) -> Vec<String> {
    probs.causes().to_vec()
}

/// Per-record per-cause log-likelihood: Yes cells contribute ln P, No
/// cells ln(1−P), Missing cells nothing.
fn fixed_loglik(data: &SymptomMatrix, probs: &CondProbMatrix) -> Grid<f64> {
    let n = data.n_records();
    let c = probs.n_causes();
    let s = data.n_symptoms();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0f64; c];
            for j in 0..s {
                match data.value(i, j) {
                    SymptomValue::Yes => {
                        for (k, v) in row.iter_mut().enumerate() {
                            let p = probs.prob(j, k);
                            *v += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
                        }
                    }
                    SymptomValue::No => {
                        for (k, v) in row.iter_mut().enumerate() {
                            let q = 1.0 - probs.prob(j, k);
                            *v += if q > 0.0 { q.ln() } else { f64::NEG_INFINITY };
                        }
                    }
                    SymptomValue::Missing => {}
                }
            }
            row
        })
        .collect();
    let mut grid = Grid::filled(n, c, 0.0);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            grid.set(i, k, v);
        }
    }
    grid
}

/// Groups the matrix cells by grade so the sampler can re-draw the
/// grade values. Structural 0/1 levels stay fixed.
fn build_level_model(data: &SymptomMatrix, probs: &CondProbMatrix) -> Result<LevelModel> {
    let grades = probs.grades().ok_or_else(|| {
        VaError::Config("level re-estimation needs a grade-annotated probability matrix".into())
    })?;
    // label → value, consistent across cells
    let mut labels: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for j in 0..probs.n_symptoms() {
        for k in 0..probs.n_causes() {
            let label = grades.get(j, k);
            let value = probs.prob(j, k);
            match labels.iter().position(|l| l == label) {
                Some(idx) => {
                    if (values[idx] - value).abs() > 1e-12 {
                        return Err(VaError::Config(format!(
                            "grade {:?} maps to both {} and {}",
                            label, values[idx], value
                        )));
                    }
                }
                None => {
                    labels.push(label.clone());
                    values.push(value);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let labels: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    for pair in values.windows(2) {
        if !(pair[0] > pair[1]) {
            return Err(VaError::Config(
                "two grades share a value; levels must be strictly decreasing".into(),
            ));
        }
    }
    let fixed: Vec<bool> = values.iter().map(|&v| v == 0.0 || v == 1.0).collect();
    let level_of = |j: usize, k: usize| -> u16 {
        let label = grades.get(j, k);
        labels.iter().position(|l| l == label).unwrap() as u16
    };

    let n = data.n_records();
    let c = probs.n_causes();
    let mut cell_counts = Grid::filled(n, c, Vec::new());
    for i in 0..n {
        for k in 0..c {
            let mut per_level: Vec<(u16, u32, u32)> = Vec::new();
            for j in 0..data.n_symptoms() {
                let (yes, no) = match data.value(i, j) {
                    SymptomValue::Yes => (1u32, 0u32),
                    SymptomValue::No => (0, 1),
                    SymptomValue::Missing => continue,
                };
                let level = level_of(j, k);
                match per_level.iter_mut().find(|(l, _, _)| *l == level) {
                    Some(entry) => {
                        entry.1 += yes;
                        entry.2 += no;
                    }
                    None => per_level.push((level, yes, no)),
                }
            }
            cell_counts.set(i, k, per_level);
        }
    }

    Ok(LevelModel {
        labels,
        values,
        fixed,
        cell_counts,
    })
}

/// Per-death quantile summaries at the requested credible level,
/// recomputed from the stored draws.
pub fn insilico_indiv_summary(sample: &PosteriorSample, ci: f64) -> Result<IndivProbResult> {
    if !(0.0 < ci && ci < 1.0) {
        return Err(VaError::Config(format!("CI level {} outside (0,1)", ci)));
    }
    let draws = sample.indiv_draws.as_ref().ok_or_else(|| {
        VaError::Config("fit kept no individual draws; refit with keep_indiv_draws".into())
    })?;
    if draws.is_empty() {
        return Err(VaError::Validation("no retained draws".into()));
    }
    let n = sample.ids.len();
    let c = sample.causes.len();
    let d = draws.len();
    let (p_lo, p_hi) = ((1.0 - ci) / 2.0, 1.0 - (1.0 - ci) / 2.0);

    let mut mean_g = Grid::filled(n, c, 0.0);
    let mut median_g = Grid::filled(n, c, 0.0);
    let mut lower_g = Grid::filled(n, c, 0.0);
    let mut upper_g = Grid::filled(n, c, 0.0);
    let mut buf = vec![0.0f64; d];
    for i in 0..n {
        for k in 0..c {
            for (t, draw) in draws.iter().enumerate() {
                buf[t] = *draw.get(i, k);
            }
            mean_g.set(i, k, mean(&buf));
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            median_g.set(i, k, quantile_type7(&buf, 0.5));
            lower_g.set(i, k, quantile_type7(&buf, p_lo));
            upper_g.set(i, k, quantile_type7(&buf, p_hi));
        }
    }

    IndivProbResult::new(
        sample.ids.clone(),
        CauseList::new(sample.causes.clone())?,
        mean_g.clone(),
    )?
    .with_quantiles(QuantileSummaries {
        mean: mean_g,
        median: median_g,
        lower: lower_g,
        upper: upper_g,
        level: ci,
    })
}

/// Per-group CSMF summary (mean, sd, credible bounds at the fit's CI).
pub fn insilico_csmf_summary(sample: &PosteriorSample) -> Result<CSMFEstimate> {
    let c = sample.causes.len();
    let d = sample.retained();
    if d == 0 {
        return Err(VaError::Validation("no retained draws".into()));
    }
    let (p_lo, p_hi) = ((1.0 - sample.ci) / 2.0, 1.0 - (1.0 - sample.ci) / 2.0);
    let mut groups = Vec::with_capacity(sample.groups.len());
    for (g, label) in sample.groups.iter().enumerate() {
        let draws = &sample.csmf_draws[g];
        let mut point = Vec::with_capacity(c);
        let mut sd = Vec::with_capacity(c);
        let mut lower = Vec::with_capacity(c);
        let mut median = Vec::with_capacity(c);
        let mut upper = Vec::with_capacity(c);
        for k in 0..c {
            let mut chain: Vec<f64> = (0..d).map(|t| *draws.get(t, k)).collect();
            point.push(mean(&chain));
            sd.push(variance(&chain).sqrt());
            chain.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lower.push(quantile_type7(&chain, p_lo));
            median.push(quantile_type7(&chain, 0.5));
            upper.push(quantile_type7(&chain, p_hi));
        }
        groups.push(CsmfGroup {
            label: label.clone(),
            point,
            summary: Some(CsmfSummary {
                mean: Vec::new(),
                sd,
                lower,
                median,
                upper,
            }),
        });
    }
    // the group point doubles as the mean column
    for g in &mut groups {
        if let Some(s) = g.summary.as_mut() {
            s.mean = g.point.clone();
        }
    }
    CSMFEstimate::new(sample.causes.clone(), groups)
}
