//! The Metropolis-within-Gibbs chain behind [`insilico_fit`].
//!
//! Sweep order: (1) each death's cause assignment from its categorical
//! full conditional, (2) optional grade-value re-estimation, (3) each
//! sub-population's θ by componentwise random-walk MH on the softmax
//! likelihood, (4) conjugate μ and σ² draws. The proposal scale adapts
//! toward ~0.35 acceptance during burn-in and is frozen afterwards, so
//! retained draws come from a fixed kernel.
//!
//! [`insilico_fit`]: super::insilico_fit

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Result, VaError};
use crate::model::Grid;
use crate::util::log_sum_exp;

use super::InsilicoConfig;

const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPTANCE: f64 = 0.35;

/// Grade levels shared by every conditional-probability cell, plus the
/// per-(record, cause) evidence counts needed to rebuild likelihoods
/// when the level values move.
#[derive(Debug, Clone)]
pub(crate) struct LevelModel {
    pub labels: Vec<String>,
    /// Strictly decreasing; mutated by re-estimation draws.
    pub values: Vec<f64>,
    /// Boundary levels (exactly 0 or 1) stay structural and are never
    /// re-estimated.
    pub fixed: Vec<bool>,
    /// Per (record, cause): (level, yes cells, no cells), sparse.
    pub cell_counts: Grid<Vec<(u16, u32, u32)>>,
}

impl LevelModel {
    pub fn loglik(&self, record: usize, cause: usize) -> f64 {
        let mut total = 0.0;
        for &(level, yes, no) in self.cell_counts.get(record, cause) {
            let v = self.values[level as usize];
            if yes > 0 {
                if v == 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += yes as f64 * v.ln();
            }
            if no > 0 {
                if v == 1.0 {
                    return f64::NEG_INFINITY;
                }
                total += no as f64 * (1.0 - v).ln();
            }
        }
        total
    }
}

pub(crate) struct ChainSpec<'a> {
    pub n: usize,
    pub c: usize,
    pub n_groups: usize,
    pub group_of: &'a [usize],
    /// Effective per-record cause mask (impossibility ∩ restriction).
    pub allowed: &'a Grid<bool>,
    /// Causes allowed for at least one record; the rest are pinned to 0.
    pub active: &'a [bool],
    /// Fixed per-record/cause log-likelihood; None when levels move.
    pub loglik: Option<&'a Grid<f64>>,
    pub levels: Option<LevelModel>,
    /// Per-record log prior weights (physician debiasing); −inf allowed.
    pub log_prior: Option<&'a Grid<f64>>,
    pub config: &'a InsilicoConfig,
    /// Possibly doubled beyond `config.nsim` by auto-length.
    pub nsim: usize,
}

pub(crate) struct ChainOutput {
    /// Per group: retained × C, rows sum to 1.
    pub csmf_draws: Vec<Grid<f64>>,
    /// Per retained draw: N × C, rows sum to 1.
    pub indiv_draws: Option<Vec<Grid<f64>>>,
    /// Post burn-in MH acceptance per group.
    pub acceptance: Vec<f64>,
    /// Posterior-mean grade values when re-estimated.
    pub levels: Option<Vec<(String, f64)>>,
    pub burn_in: usize,
}

struct MhBook {
    scale: f64,
    batch_proposed: usize,
    batch_accepted: usize,
    kept_proposed: usize,
    kept_accepted: usize,
}

pub(crate) fn run_chain(spec: &ChainSpec) -> Result<ChainOutput> {
    let cfg = spec.config;
    let burn_in = (spec.nsim as f64 * cfg.burn_in_fraction).floor() as usize;
    let retained_target = (spec.nsim - burn_in) / cfg.thin;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let active_idx: Vec<usize> = (0..spec.c).filter(|&k| spec.active[k]).collect();
    let mut levels = spec.levels.clone();

    let mut theta = vec![vec![0.0f64; spec.c]; spec.n_groups];
    let mut mu = cfg.mu_prior_mean;
    let mut sigma2 = 1.0f64;
    let mut books: Vec<MhBook> = (0..spec.n_groups)
        .map(|_| MhBook {
            scale: cfg.proposal_scale,
            batch_proposed: 0,
            batch_accepted: 0,
            kept_proposed: 0,
            kept_accepted: 0,
        })
        .collect();

    // Cause assignments start uniform over each record's allowed causes.
    let mut y = vec![0usize; spec.n];
    for i in 0..spec.n {
        let options: Vec<usize> = (0..spec.c).filter(|&k| *spec.allowed.get(i, k)).collect();
        y[i] = options[rng.random_range(0..options.len())];
    }

    let loglik_at = |levels: &Option<LevelModel>, i: usize, k: usize| -> f64 {
        match (spec.loglik, levels) {
            (Some(g), _) => *g.get(i, k),
            (None, Some(m)) => m.loglik(i, k),
            (None, None) => 0.0,
        }
    };

    let mut csmf_draws: Vec<Grid<f64>> =
        (0..spec.n_groups).map(|_| Grid::filled(retained_target, spec.c, 0.0)).collect();
    let mut indiv_draws: Option<Vec<Grid<f64>>> =
        cfg.keep_indiv_draws.then(Vec::new);
    let mut level_sums = levels
        .as_ref()
        .map(|m| vec![0.0f64; m.values.len()]);
    let mut kept = 0usize;

    let mut ln_pi = vec![vec![f64::NEG_INFINITY; spec.c]; spec.n_groups];
    let mut probs_buf = vec![0.0f64; spec.c];
    for t in 1..=spec.nsim {
        for g in 0..spec.n_groups {
            softmax_log(&theta[g], &active_idx, &mut ln_pi[g]);
        }

        // (1) cause assignments
        for i in 0..spec.n {
            record_probs(spec, &levels, &loglik_at, i, &ln_pi[spec.group_of[i]], &mut probs_buf);
            y[i] = sample_categorical(&mut rng, &probs_buf);
        }

        // (2) grade-value re-estimation
        if let Some(model) = levels.as_mut() {
            resample_levels(model, &y, &mut rng)?;
        }

        // (3) θ per group, componentwise random walk
        let mut counts = vec![vec![0usize; spec.c]; spec.n_groups];
        for i in 0..spec.n {
            counts[spec.group_of[i]][y[i]] += 1;
        }
        for g in 0..spec.n_groups {
            let n_g: usize = counts[g].iter().sum();
            let book = &mut books[g];
            for &k in &active_idx {
                let eps: f64 = rng.sample::<f64, _>(StandardNormal) * book.scale;
                let proposed = theta[g][k] + eps;
                let lse_old = lse_active(&theta[g], &active_idx);
                let old = theta[g][k];
                theta[g][k] = proposed;
                let lse_new = lse_active(&theta[g], &active_idx);
                theta[g][k] = old;

                let delta = counts[g][k] as f64 * (proposed - old)
                    - n_g as f64 * (lse_new - lse_old)
                    + ((old - mu).powi(2) - (proposed - mu).powi(2)) / (2.0 * sigma2);
                let accept = delta >= 0.0 || rng.random::<f64>() < delta.exp();
                book.batch_proposed += 1;
                if t > burn_in {
                    book.kept_proposed += 1;
                }
                if accept {
                    theta[g][k] = proposed;
                    book.batch_accepted += 1;
                    if t > burn_in {
                        book.kept_accepted += 1;
                    }
                }
            }
            if t <= burn_in && book.batch_proposed >= ADAPT_BATCH * active_idx.len() {
                let rate = book.batch_accepted as f64 / book.batch_proposed as f64;
                book.scale =
                    (book.scale * (0.5 * (rate - TARGET_ACCEPTANCE)).exp()).clamp(1e-3, 1e3);
                book.batch_proposed = 0;
                book.batch_accepted = 0;
            }
        }

        // (4) conjugate hyperparameter draws
        let m = (spec.n_groups * active_idx.len()) as f64;
        let theta_sum: f64 = theta
            .iter()
            .flat_map(|row| active_idx.iter().map(move |&k| row[k]))
            .sum();
        let post_var = 1.0 / (1.0 / cfg.mu_prior_variance + m / sigma2);
        let post_mean = post_var * (cfg.mu_prior_mean / cfg.mu_prior_variance + theta_sum / sigma2);
        mu = post_mean + rng.sample::<f64, _>(StandardNormal) * post_var.sqrt();

        let rss: f64 = theta
            .iter()
            .flat_map(|row| active_idx.iter().map(move |&k| (row[k] - mu).powi(2)))
            .sum();
        let shape = cfg.sigma2_shape + m / 2.0;
        let rate = cfg.sigma2_scale + rss / 2.0;
        let gamma = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| VaError::Config(format!("invalid variance hyperparameters: {}", e)))?;
        sigma2 = (1.0 / gamma.sample(&mut rng)).max(1e-12);

        // retention
        if t > burn_in && (t - burn_in) % cfg.thin == 0 && kept < retained_target {
            for g in 0..spec.n_groups {
                let mut pi: Vec<f64> = ln_pi_to_probs(&theta[g], &active_idx, spec.c);
                let sum: f64 = pi.iter().sum();
                for v in &mut pi {
                    *v /= sum;
                }
                debug_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for k in 0..spec.c {
                    csmf_draws[g].set(kept, k, pi[k]);
                }
            }
            if let Some(draws) = indiv_draws.as_mut() {
                let mut grid = Grid::filled(spec.n, spec.c, 0.0f64);
                for i in 0..spec.n {
                    record_probs(
                        spec,
                        &levels,
                        &loglik_at,
                        i,
                        &ln_pi[spec.group_of[i]],
                        &mut probs_buf,
                    );
                    for k in 0..spec.c {
                        grid.set(i, k, probs_buf[k]);
                    }
                }
                draws.push(grid);
            }
            if let (Some(sums), Some(model)) = (level_sums.as_mut(), levels.as_ref()) {
                for (s, v) in sums.iter_mut().zip(&model.values) {
                    *s += v;
                }
            }
            kept += 1;
        }
    }

    let acceptance = books
        .iter()
        .map(|b| {
            if b.kept_proposed == 0 {
                0.0
            } else {
                b.kept_accepted as f64 / b.kept_proposed as f64
            }
        })
        .collect();
    let levels_out = match (level_sums, levels) {
        (Some(sums), Some(model)) if kept > 0 => Some(
            model
                .labels
                .iter()
                .cloned()
                .zip(sums.iter().map(|s| s / kept as f64))
                .collect(),
        ),
        _ => None,
    };

    Ok(ChainOutput {
        csmf_draws,
        indiv_draws,
        acceptance,
        levels: levels_out,
        burn_in,
    })
}

/// ln softmax over the active causes; inactive entries stay −inf.
fn softmax_log(theta: &[f64], active_idx: &[usize], out: &mut [f64]) {
    let lse = lse_active(theta, active_idx);
    for v in out.iter_mut() {
        *v = f64::NEG_INFINITY;
    }
    for &k in active_idx {
        out[k] = theta[k] - lse;
    }
}

fn lse_active(theta: &[f64], active_idx: &[usize]) -> f64 {
    let max = active_idx.iter().map(|&k| theta[k]).fold(f64::NEG_INFINITY, f64::max);
    max + active_idx.iter().map(|&k| (theta[k] - max).exp()).sum::<f64>().ln()
}

fn ln_pi_to_probs(theta: &[f64], active_idx: &[usize], c: usize) -> Vec<f64> {
    let lse = lse_active(theta, active_idx);
    let mut pi = vec![0.0f64; c];
    for &k in active_idx {
        pi[k] = (theta[k] - lse).exp();
    }
    pi
}

/// Normalized posterior over one record's causes: π × prior ×
/// likelihood on the allowed set. Falls back to π × prior, then π
/// alone, when every factor combination is −inf (degenerate evidence).
fn record_probs(
    spec: &ChainSpec,
    levels: &Option<LevelModel>,
    loglik_at: &impl Fn(&Option<LevelModel>, usize, usize) -> f64,
    i: usize,
    ln_pi: &[f64],
    out: &mut [f64],
) {
    let prior = |k: usize| -> f64 {
        match spec.log_prior {
            Some(g) => {
                let w = *g.get(i, k);
                if w > 0.0 {
                    w.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            None => 0.0,
        }
    };
    let fill = |out: &mut [f64], with_lik: bool, with_prior: bool| -> bool {
        let mut logw = vec![f64::NEG_INFINITY; spec.c];
        for k in 0..spec.c {
            if !*spec.allowed.get(i, k) {
                continue;
            }
            let mut w = ln_pi[k];
            if with_prior {
                w += prior(k);
            }
            if with_lik {
                w += loglik_at(levels, i, k);
            }
            logw[k] = w;
        }
        let lse = log_sum_exp(&logw);
        if !lse.is_finite() {
            return false;
        }
        for k in 0..spec.c {
            out[k] = (logw[k] - lse).exp();
        }
        true
    };
    if fill(out, true, true) {
        return;
    }
    if fill(out, false, true) {
        return;
    }
    let ok = fill(out, false, false);
    debug_assert!(ok, "record {} has no allowed cause with positive mass", i);
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
            cum += p;
            if u < cum {
                return k;
            }
        }
    }
    last_positive
}

/// Gibbs update for the grade values: each non-structural level gets a
/// Beta posterior from the Yes/No cells currently attributed to it,
/// truncated between its neighbors to keep the ordering strict.
fn resample_levels(model: &mut LevelModel, y: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    let l = model.values.len();
    let mut yes = vec![0u64; l];
    let mut no = vec![0u64; l];
    for (i, &k) in y.iter().enumerate() {
        for &(level, a, b) in model.cell_counts.get(i, k) {
            yes[level as usize] += a as u64;
            no[level as usize] += b as u64;
        }
    }
    for idx in 0..l {
        if model.fixed[idx] {
            continue;
        }
        let hi = if idx == 0 { 1.0 } else { model.values[idx - 1] };
        let lo = if idx + 1 == l { 0.0 } else { model.values[idx + 1] };
        if !(hi > lo) {
            continue;
        }
        let beta = Beta::new(1.0 + yes[idx] as f64, 1.0 + no[idx] as f64)
            .map_err(|e| VaError::Config(format!("level posterior failed: {}", e)))?;
        let (clo, chi) = (beta.cdf(lo), beta.cdf(hi));
        if !(chi > clo) {
            continue;
        }
        let u = rng.random_range(clo..chi);
        let drawn = beta.inverse_cdf(u);
        if drawn > lo && drawn < hi {
            model.values[idx] = drawn;
        }
    }
    Ok(())
}
