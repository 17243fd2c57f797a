//! Pooling several physicians' broad-category codes into one de-biased
//! prior per death.
//!
//! Physicians disagree systematically, so codes are not averaged.
//! Instead a rater-reliability model in the Dawid–Skene family is fit by
//! EM: each death has a latent true category, each physician a confusion
//! matrix, and the E-step posterior over categories becomes the death's
//! prior for downstream coding. Unknown codes carry no information.

use std::collections::HashMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::Grid;

pub const UNKNOWN_CATEGORY: &str = "Unknown";

/// One physician's code for one death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicianCode {
    pub physician: usize,
    /// Index into the substantive category list; None is an explicit
    /// Unknown, equivalent to no code at all.
    pub category: Option<usize>,
}

/// All physician codings for a batch of deaths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicianCodes {
    death_ids: Vec<String>,
    categories: Vec<String>,
    physicians: Vec<String>,
    codes: Vec<Vec<PhysicianCode>>,
}

impl PhysicianCodes {
    pub fn new(
        death_ids: Vec<String>,
        categories: Vec<String>,
        physicians: Vec<String>,
        codes: Vec<Vec<PhysicianCode>>,
    ) -> Result<Self> {
        if codes.len() != death_ids.len() {
            return Err(VaError::Validation(format!(
                "{} code lists for {} deaths",
                codes.len(),
                death_ids.len()
            )));
        }
        if categories.len() < 2 {
            return Err(VaError::Validation(
                "physician codes need at least 2 substantive categories".into(),
            ));
        }
        for per_death in &codes {
            for c in per_death {
                if c.physician >= physicians.len() {
                    return Err(VaError::Validation(format!(
                        "physician index {} out of roster range",
                        c.physician
                    )));
                }
                if let Some(k) = c.category {
                    if k >= categories.len() {
                        return Err(VaError::Validation(format!(
                            "category index {} out of range",
                            k
                        )));
                    }
                }
            }
        }
        Ok(PhysicianCodes {
            death_ids,
            categories,
            physicians,
            codes,
        })
    }

    pub fn death_ids(&self) -> &[String] {
        &self.death_ids
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn physicians(&self) -> &[String] {
        &self.physicians
    }

    pub fn codes(&self) -> &[Vec<PhysicianCode>] {
        &self.codes
    }
}

/// Reads a wide table `ID, <code col>, <reviewer col>, …`.
///
/// `pairs` names each (code column, reviewer column) in order. Empty,
/// `NA` and `<NA>` cells mean no entry; a code whose reviewer cell is
/// empty is attributed to a synthetic physician named after the code
/// column. Codes equal to `unknown_label` are kept as explicit Unknowns.
/// Categories are listed alphabetically.
pub fn read_physician_csv<R: io::Read>(
    reader: R,
    pairs: &[(String, String)],
    unknown_label: &str,
) -> Result<PhysicianCodes> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("ID") {
        return Err(VaError::Format(format!(
            "first column must be named \"ID\", found {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            VaError::Format(format!("column {:?} not found in header", name))
        })
    };
    let mut bound = Vec::new();
    for (code_col, rev_col) in pairs {
        bound.push((col(code_col)?, col(rev_col)?, code_col.clone()));
    }

    let absent = |cell: &str| cell.is_empty() || cell == "NA" || cell == "<NA>";

    let mut death_ids = Vec::new();
    let mut raw: Vec<Vec<(String, Option<String>)>> = Vec::new();
    let mut category_set = Vec::new();
    for record in rdr.records() {
        let record = record?;
        death_ids.push(record[0].to_string());
        let mut per_death = Vec::new();
        for (code_idx, rev_idx, code_col) in &bound {
            let code = record.get(*code_idx).unwrap_or("").trim().to_string();
            if absent(&code) {
                continue;
            }
            let reviewer = record.get(*rev_idx).unwrap_or("").trim();
            let physician = if absent(reviewer) {
                code_col.clone()
            } else {
                reviewer.to_string()
            };
            let category = if code == unknown_label {
                None
            } else {
                if !category_set.contains(&code) {
                    category_set.push(code.clone());
                }
                Some(code)
            };
            per_death.push((physician, category));
        }
        raw.push(per_death);
    }
    category_set.sort();

    let mut physicians: Vec<String> = Vec::new();
    let mut codes = Vec::with_capacity(raw.len());
    let cat_index: HashMap<&str, usize> = category_set
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    for per_death in &raw {
        let mut list = Vec::new();
        for (physician, category) in per_death {
            let p = match physicians.iter().position(|x| x == physician) {
                Some(p) => p,
                None => {
                    physicians.push(physician.clone());
                    physicians.len() - 1
                }
            };
            list.push(PhysicianCode {
                physician: p,
                category: category.as_ref().map(|c| cat_index[c.as_str()]),
            });
        }
        codes.push(list);
    }
    PhysicianCodes::new(death_ids, category_set, physicians, codes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasOptions {
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    pub max_itr: usize,
    /// Initial on-diagonal confusion weight; the rest of each row is
    /// spread uniformly.
    pub init_diagonal: f64,
}

impl Default for DebiasOptions {
    fn default() -> Self {
        DebiasOptions {
            tol: 1e-4,
            max_itr: 100,
            init_diagonal: 0.8,
        }
    }
}

/// EM output: per-death posteriors and per-physician confusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub death_ids: Vec<String>,
    pub categories: Vec<String>,
    /// N×K, rows sum to 1. Deaths with no informative code hold the
    /// fitted marginal.
    pub posteriors: Grid<f64>,
    pub physicians: Vec<String>,
    /// Per physician: K×K, row = true category, column = coded category.
    pub confusion: Vec<Grid<f64>>,
    pub marginal: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each E-step; non-decreasing.
    pub log_likelihoods: Vec<f64>,
}

/// Fits the rater model by EM.
///
/// E-step: posterior over a death's true category given its codes.
/// M-step: refit category marginals and each physician's confusion rows
/// from the soft assignments. Iterates until the relative log-likelihood
/// change falls below `tol` or `max_itr` passes.
pub fn physician_debias(codes: &PhysicianCodes, opts: &DebiasOptions) -> Result<DebiasResult> {
    if opts.tol <= 0.0 || !opts.tol.is_finite() {
        return Err(VaError::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.max_itr == 0 {
        return Err(VaError::Config("max iterations must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&opts.init_diagonal) {
        return Err(VaError::Config(format!(
            "initial diagonal weight {} outside [0,1]",
            opts.init_diagonal
        )));
    }
    let k = codes.categories().len();
    let r = codes.physicians().len();
    let n = codes.death_ids().len();

    // Deaths carrying at least one substantive code drive the fit.
    let informative: Vec<usize> = (0..n)
        .filter(|&i| codes.codes()[i].iter().any(|c| c.category.is_some()))
        .collect();
    if informative.is_empty() {
        return Err(VaError::Validation(
            "no death carries a substantive physician code".into(),
        ));
    }

    let mut marginal = vec![1.0 / k as f64; k];
    let off = if k > 1 {
        (1.0 - opts.init_diagonal) / (k - 1) as f64
    } else {
        0.0
    };
    let mut confusion: Vec<Grid<f64>> = (0..r)
        .map(|_| {
            let mut g = Grid::filled(k, k, off);
            for t in 0..k {
                g.set(t, t, opts.init_diagonal);
            }
            g
        })
        .collect();

    let mut weights = Grid::filled(informative.len(), k, 0.0f64);
    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_itr {
        iterations += 1;
        // E-step under the current parameters, with the data likelihood
        // as a by-product.
        let mut ll = 0.0;
        for (row, &i) in informative.iter().enumerate() {
            let mut log_w = vec![0.0f64; k];
            for t in 0..k {
                let mut lw = marginal[t].ln();
                for c in &codes.codes()[i] {
                    if let Some(cat) = c.category {
                        lw += confusion[c.physician].get(t, cat).ln();
                    }
                }
                log_w[t] = lw;
            }
            ll += crate::util::log_sum_exp(&log_w);
            let w = crate::util::normalized_from_log(&log_w).ok_or_else(|| {
                VaError::Validation(format!(
                    "death {:?} has zero likelihood under every category",
                    codes.death_ids()[i]
                ))
            })?;
            for t in 0..k {
                weights.set(row, t, w[t]);
            }
        }

        if let Some(&prev) = lls.last() {
            debug_assert!(
                ll >= prev - 1e-9 * prev.abs().max(1.0),
                "log-likelihood decreased: {} -> {}",
                prev,
                ll
            );
            if (ll - prev).abs() <= opts.tol * prev.abs().max(1.0) {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);

        // M-step: marginals then confusion rows.
        let m = informative.len() as f64;
        for t in 0..k {
            marginal[t] = (0..informative.len()).map(|row| *weights.get(row, t)).sum::<f64>() / m;
        }
        for (p, conf) in confusion.iter_mut().enumerate() {
            for t in 0..k {
                let mut row_counts = vec![0.0f64; k];
                let mut total = 0.0;
                for (row, &i) in informative.iter().enumerate() {
                    for c in &codes.codes()[i] {
                        if c.physician == p {
                            if let Some(cat) = c.category {
                                row_counts[cat] += *weights.get(row, t);
                                total += *weights.get(row, t);
                            }
                        }
                    }
                }
                if total > 0.0 {
                    for cat in 0..k {
                        conf.set(t, cat, row_counts[cat] / total);
                    }
                }
            }
        }
    }

    let mut posteriors = Grid::filled(n, k, 0.0f64);
    for i in 0..n {
        match informative.iter().position(|&x| x == i) {
            Some(row) => {
                for t in 0..k {
                    posteriors.set(i, t, *weights.get(row, t));
                }
            }
            None => {
                for t in 0..k {
                    posteriors.set(i, t, marginal[t]);
                }
            }
        }
    }

    Ok(DebiasResult {
        death_ids: codes.death_ids().to_vec(),
        categories: codes.categories().to_vec(),
        posteriors,
        physicians: codes.physicians().to_vec(),
        confusion,
        marginal,
        iterations,
        converged,
        log_likelihoods: lls,
    })
}

/// Fine-cause to broad-category assignment; each cause belongs to
/// exactly one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCategoryMap {
    causes: Vec<String>,
    category_of: Vec<String>,
}

impl CauseCategoryMap {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut causes = Vec::with_capacity(pairs.len());
        let mut category_of = Vec::with_capacity(pairs.len());
        for (cause, category) in pairs {
            if causes.contains(&cause) {
                return Err(VaError::Config(format!(
                    "cause {:?} mapped to more than one category",
                    cause
                )));
            }
            causes.push(cause);
            category_of.push(category);
        }
        if causes.is_empty() {
            return Err(VaError::Config("empty cause-category mapping".into()));
        }
        Ok(CauseCategoryMap { causes, category_of })
    }

    /// Reads `cause,category` rows.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["cause", "category"] {
            return Err(VaError::Config(format!(
                "mapping header must be cause,category — found {:?}",
                cols.join(",")
            )));
        }
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
        Self::new(pairs)
    }

    pub fn causes(&self) -> &[String] {
        &self.causes
    }

    pub fn category_of(&self, cause_index: usize) -> &str {
        &self.category_of[cause_index]
    }
}

/// Spreads each death's category mass equally over the category's member
/// causes, yielding a per-death prior over fine causes (cause order
/// follows the mapping file).
pub fn map_to_causes(
    debias: &DebiasResult,
    map: &CauseCategoryMap,
) -> Result<(Vec<String>, Grid<f64>)> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); debias.categories.len()];
    for (ci, cat) in map.category_of.iter().enumerate() {
        if let Some(t) = debias.categories.iter().position(|c| c == cat) {
            members[t].push(ci);
        }
    }
    for (t, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(VaError::Config(format!(
                "category {:?} has no mapped causes",
                debias.categories[t]
            )));
        }
    }

    let n = debias.death_ids.len();
    let mut out = Grid::filled(n, map.causes.len(), 0.0f64);
    for i in 0..n {
        for (t, m) in members.iter().enumerate() {
            let share = *debias.posteriors.get(i, t) / m.len() as f64;
            for &ci in m {
                out.set(i, ci, share);
            }
        }
        let sum: f64 = out.row(i).iter().sum();
        if sum > 0.0 {
            for v in out.row_mut(i) {
                *v /= sum;
            }
        }
    }
    Ok((map.causes.clone(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn code(physician: usize, category: Option<usize>) -> PhysicianCode {
        PhysicianCode {
            physician,
            category,
        }
    }

    fn two_category_codes(per_death: Vec<Vec<PhysicianCode>>) -> PhysicianCodes {
        PhysicianCodes::new(
            (0..per_death.len()).map(|i| format!("d{}", i)).collect(),
            vec!["CatA".into(), "CatB".into()],
            vec!["doc1".into(), "doc2".into()],
            per_death,
        )
        .unwrap()
    }

    #[test]
    fn unanimous_codes_converge_to_point_masses() {
        let codes = two_category_codes(vec![
            vec![code(0, Some(0)), code(1, Some(0))],
            vec![code(0, Some(0)), code(1, Some(0))],
            vec![code(0, Some(1)), code(1, Some(1))],
            vec![code(0, Some(1)), code(1, Some(1))],
        ]);
        let res = physician_debias(&codes, &DebiasOptions::default()).unwrap();
        assert!(res.converged);
        assert!(*res.posteriors.get(0, 0) > 0.999);
        assert!(*res.posteriors.get(2, 1) > 0.999);
        for i in 0..4 {
            let sum: f64 = res.posteriors.row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_death_single_code_reflects_init_smoothing() {
        let codes = PhysicianCodes::new(
            vec!["d0".into()],
            vec!["CatA".into(), "CatB".into()],
            vec!["doc1".into()],
            vec![vec![code(0, Some(0))]],
        )
        .unwrap();
        let res = physician_debias(&codes, &DebiasOptions::default()).unwrap();
        assert_abs_diff_eq!(*res.posteriors.get(0, 0), 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(*res.posteriors.get(0, 1), 0.2, epsilon = 1e-9);
    }

    #[test]
    fn unknown_codes_get_marginal_posterior() {
        // Symmetric data: marginal is uniform, so the Unknown-only death
        // ends up uniform over the substantive categories.
        let codes = two_category_codes(vec![
            vec![code(0, Some(0)), code(1, Some(0))],
            vec![code(0, Some(1)), code(1, Some(1))],
            vec![code(0, None), code(1, None)],
        ]);
        let res = physician_debias(&codes, &DebiasOptions::default()).unwrap();
        assert_abs_diff_eq!(*res.posteriors.get(2, 0), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(*res.posteriors.get(2, 1), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let codes = two_category_codes(vec![
            vec![code(0, Some(0)), code(1, Some(1))],
            vec![code(0, Some(0)), code(1, Some(0))],
            vec![code(0, Some(1)), code(1, Some(1))],
            vec![code(0, Some(1)), code(1, Some(0))],
            vec![code(0, Some(0))],
        ]);
        let res = physician_debias(&codes, &DebiasOptions::default()).unwrap();
        for w in res.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn physician_order_permutation_is_irrelevant() {
        let a = two_category_codes(vec![
            vec![code(0, Some(0)), code(1, Some(1))],
            vec![code(0, Some(1)), code(1, Some(1))],
            vec![code(0, Some(0)), code(1, Some(0))],
        ]);
        // Same data with the pair order flipped within each death.
        let b = two_category_codes(vec![
            vec![code(1, Some(1)), code(0, Some(0))],
            vec![code(1, Some(1)), code(0, Some(1))],
            vec![code(1, Some(0)), code(0, Some(0))],
        ]);
        let ra = physician_debias(&a, &DebiasOptions::default()).unwrap();
        let rb = physician_debias(&b, &DebiasOptions::default()).unwrap();
        for i in 0..3 {
            for t in 0..2 {
                assert_abs_diff_eq!(
                    *ra.posteriors.get(i, t),
                    *rb.posteriors.get(i, t),
                    epsilon = 1e-12
                );
            }
        }
        for p in 0..2 {
            for t in 0..2 {
                for c in 0..2 {
                    assert_abs_diff_eq!(
                        *ra.confusion[p].get(t, c),
                        *rb.confusion[p].get(t, c),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn no_substantive_codes_is_an_error() {
        let codes = two_category_codes(vec![vec![code(0, None)], vec![]]);
        assert!(physician_debias(&codes, &DebiasOptions::default()).is_err());
    }

    #[test]
    fn bad_options_rejected() {
        let codes = two_category_codes(vec![vec![code(0, Some(0)), code(1, Some(1))]]);
        let mut o = DebiasOptions::default();
        o.tol = 0.0;
        assert!(physician_debias(&codes, &o).is_err());
        let mut o = DebiasOptions::default();
        o.max_itr = 0;
        assert!(physician_debias(&codes, &o).is_err());
    }

    #[test]
    fn csv_parsing_handles_na_and_unknown() {
        let csv = "ID,code1,rev1,code2,rev2\n\
                   d1,CatA,doc1,CatB,doc2\n\
                   d2,Unknown,doc1,<NA>,<NA>\n\
                   d3,CatB,,NA,doc2\n";
        let pairs = vec![
            ("code1".to_string(), "rev1".to_string()),
            ("code2".to_string(), "rev2".to_string()),
        ];
        let codes = read_physician_csv(csv.as_bytes(), &pairs, UNKNOWN_CATEGORY).unwrap();
        assert_eq!(codes.categories(), ["CatA", "CatB"]);
        assert_eq!(codes.death_ids(), ["d1", "d2", "d3"]);
        // d2: one explicit Unknown, the NA slot dropped.
        assert_eq!(codes.codes()[1].len(), 1);
        assert_eq!(codes.codes()[1][0].category, None);
        // d3: reviewer missing, code attributed to the column physician.
        assert_eq!(codes.codes()[2].len(), 1);
        let p = codes.codes()[2][0].physician;
        assert_eq!(codes.physicians()[p], "code1");
    }

    #[test]
    fn category_mass_splits_equally_across_causes() {
        let debias = DebiasResult {
            death_ids: vec!["d0".into()],
            categories: vec!["CatA".into(), "CatB".into()],
            posteriors: Grid::from_rows(vec![vec![0.6, 0.4]], 2).unwrap(),
            physicians: vec![],
            confusion: vec![],
            marginal: vec![0.6, 0.4],
            iterations: 1,
            converged: true,
            log_likelihoods: vec![],
        };
        let map = CauseCategoryMap::new(vec![
            ("c1".into(), "CatA".into()),
            ("c2".into(), "CatA".into()),
            ("c3".into(), "CatA".into()),
            ("c4".into(), "CatB".into()),
        ])
        .unwrap();
        let (causes, prior) = map_to_causes(&debias, &map).unwrap();
        assert_eq!(causes, ["c1", "c2", "c3", "c4"]);
        for j in 0..3 {
            assert_abs_diff_eq!(*prior.get(0, j), 0.2, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(*prior.get(0, 3), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_categories_restrict_support() {
        let debias = DebiasResult {
            death_ids: vec!["d0".into()],
            categories: vec!["External".into(), "Other".into()],
            posteriors: Grid::from_rows(vec![vec![1.0, 0.0]], 2).unwrap(),
            physicians: vec![],
            confusion: vec![],
            marginal: vec![1.0, 0.0],
            iterations: 1,
            converged: true,
            log_likelihoods: vec![],
        };
        let map = CauseCategoryMap::new(vec![
            ("Road Traffic".into(), "External".into()),
            ("Falls".into(), "External".into()),
            ("Stroke".into(), "Other".into()),
        ])
        .unwrap();
        let (_, prior) = map_to_causes(&debias, &map).unwrap();
        assert_abs_diff_eq!(*prior.get(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(*prior.get(0, 1), 0.5, epsilon = 1e-12);
        assert_eq!(*prior.get(0, 2), 0.0);
    }

    #[test]
    fn unmapped_category_is_an_error() {
        let debias = DebiasResult {
            death_ids: vec!["d0".into()],
            categories: vec!["CatA".into(), "CatB".into()],
            posteriors: Grid::from_rows(vec![vec![0.5, 0.5]], 2).unwrap(),
            physicians: vec![],
            confusion: vec![],
            marginal: vec![0.5, 0.5],
            iterations: 1,
            converged: true,
            log_likelihoods: vec![],
        };
        let map = CauseCategoryMap::new(vec![("c1".into(), "CatA".into())]).unwrap();
        let err = map_to_causes(&debias, &map).unwrap_err();
        assert!(err.to_string().contains("CatB"));
    }

    #[test]
    fn duplicate_cause_mapping_rejected() {
        assert!(CauseCategoryMap::new(vec![
            ("c1".into(), "CatA".into()),
            ("c1".into(), "CatB".into()),
        ])
        .is_err());
    }
}
