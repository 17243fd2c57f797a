use std::path::{Path, PathBuf};

use clap::Args;
use va_core::consistency::{default_demographics, remove_impossible_causes};
use va_core::debias::{
    map_to_causes, physician_debias, read_physician_csv, CauseCategoryMap, DebiasOptions,
    DebiasResult,
};
use va_core::insilico::{
    insilico_convergence, insilico_csmf_summary, insilico_fit, insilico_indiv_summary,
    physician_prior_grid, subpop_labels, InsilicoConfig, PosteriorSample, RecordPriors,
};
use va_core::interva::{
    interva_code, interva_csmf, load_prior_csv, load_probbase_csv, train_condprob, ConvertType,
    GradeTable, IntervaConfig, PriorSpec,
};
use va_core::model::{
    align, CanonicalTable, CauseList, CondProbMatrix, Grid, PriorCSMF, SymptomMatrix,
};
use va_core::nbc::{nbc_code, nbc_csmf, nbc_train};
use va_core::report::{get_top_cod, CoderOutput, TopCod};
use va_core::tariff::{tariff_code, tariff_csmf, tariff_train};
use va_core::{Result, VaError};

use crate::artifacts::{csmf_to_csv, grid_to_csv, read_canonical, write_atomic};
use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct CodeArgs {
    /// Coder: interva, nbc, tariff, or insilico.
    #[arg(long)]
    model: String,

    /// Labeled training data in canonical format.
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,

    /// Column of --train holding the cause labels.
    #[arg(long, value_name = "COL")]
    train_causes: Option<String>,

    /// Grade conversion for trained probabilities: quantile, fixed, or
    /// empirical (interva default: quantile; insilico default: empirical).
    #[arg(long)]
    convert_type: Option<String>,

    /// Stock conditional-probability table (letter grades).
    #[arg(long, value_name = "FILE")]
    probbase: Option<PathBuf>,

    /// Cause prior CSV (cause,weight[,hiv,malaria]).
    #[arg(long, value_name = "FILE")]
    prior: Option<PathBuf>,

    /// Grade table overriding the built-in letter values.
    #[arg(long, value_name = "FILE")]
    grades: Option<PathBuf>,

    /// InterVA table revision: 4.02, 4.03, or 5.
    #[arg(long, default_value = "5")]
    version: String,

    /// HIV prevalence: h, l, or v.
    #[arg(long, default_value = "h")]
    hiv: String,

    /// Malaria prevalence: h, l, or v.
    #[arg(long, default_value = "h")]
    malaria: String,

    /// InterVA truncation floor.
    #[arg(long, default_value_t = 0.1)]
    floor: f64,

    /// InterVA: ranks 2-3 must also reach this fraction of the
    /// next-higher retained cause.
    #[arg(long)]
    ratio_gate: Option<f64>,

    /// NBC smoothing pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    /// NBC: uniform cause prior instead of training frequencies.
    #[arg(long)]
    uniform_prior: bool,

    /// Tariff bootstrap pool size per cause.
    #[arg(long, default_value_t = 100)]
    bootstrap: usize,

    /// Insilico MCMC sweeps.
    #[arg(long, default_value_t = 10_000)]
    nsim: usize,

    /// Insilico thinning interval.
    #[arg(long, default_value_t = 20)]
    thin: usize,

    /// Insilico burn-in fraction.
    #[arg(long, default_value_t = 0.5)]
    burn_in: f64,

    /// Insilico: double the chain when the stationarity check fails.
    #[arg(long)]
    auto_length: bool,

    /// Credible level for insilico interval summaries.
    #[arg(long, default_value_t = 0.95)]
    indiv_ci: f64,

    /// Comma-separated metadata columns defining sub-populations.
    #[arg(long, value_name = "COLS")]
    subpop: Option<String>,

    /// Comma-separated non-symptom columns in the input, beyond the
    /// conventional ones.
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    meta: Vec<String>,

    /// Insilico: re-estimate the grade values (needs a graded table).
    #[arg(long)]
    reestimate_levels: bool,

    /// Insilico: skip per-death summaries (csmf.csv only).
    #[arg(long)]
    no_indiv: bool,

    /// Insilico: write every retained CSMF draw.
    #[arg(long)]
    emit_draws: bool,

    /// Debiased physician-code posteriors (ID + one column per category),
    /// used as per-death priors.
    #[arg(long, value_name = "FILE")]
    phy_debias: Option<PathBuf>,

    /// Raw physician codes (ID,code1,rev1,…): fit the rater model here,
    /// write debias.csv, and use the posteriors as priors.
    #[arg(long, value_name = "FILE")]
    phy_raw: Option<PathBuf>,

    /// Cause → physician-category mapping CSV.
    #[arg(long, value_name = "FILE")]
    phy_cat: Option<PathBuf>,

    /// Category whose dominant deaths are restricted to its causes.
    #[arg(long, value_name = "CAT")]
    phy_external: Option<String>,

    /// Posterior share of --phy-external that triggers the restriction.
    #[arg(long, default_value_t = 0.5)]
    phy_threshold: f64,

    /// Code label (raw) or posterior column (debiased) meaning "no
    /// information".
    #[arg(long, default_value = "Unknown")]
    phy_unknown: String,

    /// Explicit code:reviewer column pairs for --phy-raw.
    #[arg(long, value_name = "PAIRS")]
    phy_pairs: Option<String>,

    /// Rater-model EM tolerance.
    #[arg(long, default_value_t = 1e-4)]
    phy_tol: f64,

    /// Rater-model EM iteration cap.
    #[arg(long, default_value_t = 100)]
    phy_max_itr: usize,

    /// Zero out causes impossible given demographic answers.
    #[arg(long)]
    screen: bool,

    /// Demographic columns for --screen (default: the conventional set).
    #[arg(long, value_name = "COLS")]
    demographics: Option<String>,

    input: PathBuf,

    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    output: PathBuf,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Training matrix + labels from --train/--train-causes.
fn load_training(args: &CodeArgs) -> Result<(CanonicalTable, Vec<String>)> {
    let path = args.train.as_ref().expect("caller checked --train");
    let col = args.train_causes.as_ref().ok_or_else(|| {
        VaError::Config("--train requires --train-causes naming the label column".into())
    })?;
    let table = read_canonical(path, std::slice::from_ref(col))?;
    let labels = table
        .meta_column(col)
        .expect("requested meta column present")
        .to_vec();
    Ok((table, labels))
}

/// Prior aligned to the probability table's cause order.
fn align_prior(spec: PriorSpec, causes: &[String]) -> Result<PriorSpec> {
    if spec.causes == causes {
        return Ok(spec);
    }
    let mut weights = Vec::with_capacity(causes.len());
    let mut hiv = Vec::with_capacity(causes.len());
    let mut malaria = Vec::with_capacity(causes.len());
    for cause in causes {
        let i = spec.causes.iter().position(|c| c == cause).ok_or_else(|| {
            VaError::Config(format!("prior file lacks cause {:?}", cause))
        })?;
        weights.push(spec.prior.weights()[i]);
        hiv.push(spec.hiv_related[i]);
        malaria.push(spec.malaria_related[i]);
    }
    if let Some(extra) = spec.causes.iter().find(|c| !causes.contains(c)) {
        return Err(VaError::Config(format!(
            "prior file names cause {:?} unknown to the probability table",
            extra
        )));
    }
    Ok(PriorSpec {
        causes: causes.to_vec(),
        prior: PriorCSMF::new(weights)?,
        hiv_related: hiv,
        malaria_related: malaria,
    })
}

/// Full-width per-record cause mask from the demographic screen, or None
/// when screening is off.
fn screening_mask(
    ctx: &Ctx,
    args: &CodeArgs,
    data: &SymptomMatrix,
    probs: &CondProbMatrix,
) -> Result<Option<Grid<bool>>> {
    if !args.screen && args.demographics.is_none() {
        return Ok(None);
    }
    let demographics = match &args.demographics {
        Some(cols) => split_list(cols),
        None => default_demographics(data),
    };
    if demographics.is_empty() {
        ctx.info("screening requested but no demographic columns found; skipping");
        return Ok(None);
    }
    let screen = remove_impossible_causes(data, probs, &demographics)?;
    if !screen.removed.is_empty() {
        ctx.info(format!(
            "screened out {} impossible cause(s): {}",
            screen.removed.len(),
            screen.removed.join(", ")
        ));
    }
    let mut full = Grid::filled(data.n_records(), probs.n_causes(), false);
    for (j, &k) in screen.retained_indices.iter().enumerate() {
        for i in 0..data.n_records() {
            full.set(i, k, *screen.mask.get(i, j));
        }
    }
    Ok(Some(full))
}

fn write_top_cod(dir: &Path, top: &[TopCod], score_name: &str) -> Result<PathBuf> {
    let path = dir.join("top_cod.csv");
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["ID", "cause", score_name])?;
    for t in top {
        wtr.write_record([t.id.as_str(), t.cause.as_str(), &t.score.to_string()])?;
    }
    write_atomic(&path, &wtr.into_inner().expect("csv flush to memory"))?;
    Ok(path)
}

pub fn run(ctx: &Ctx, args: CodeArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("code");
    mb.option("model", &args.model);
    mb.input_file(&args.input)?;
    for path in [&args.train, &args.probbase, &args.prior, &args.grades]
        .into_iter()
        .flatten()
    {
        mb.input_file(path)?;
    }

    let mut extra_cols: Vec<String> = args.subpop.as_deref().map(split_list).unwrap_or_default();
    for col in &args.meta {
        if !extra_cols.contains(col) {
            extra_cols.push(col.clone());
        }
    }
    let data = read_canonical(&args.input, &extra_cols)?;

    match args.model.as_str() {
        "interva" => interva(ctx, &args, &data, mb),
        "nbc" => nbc(ctx, &args, &data, mb),
        "tariff" => tariff(ctx, &args, &data, mb),
        "insilico" => insilico(ctx, &args, &data, mb),
        other => Err(VaError::Config(format!(
            "unknown model {:?}; expected interva, nbc, tariff, or insilico",
            other
        ))),
    }
}

fn parse_convert_type(args: &CodeArgs, default: ConvertType) -> Result<ConvertType> {
    match &args.convert_type {
        Some(s) => s.parse(),
        None => Ok(default),
    }
}

/// Trained or stock conditional probabilities for interva/insilico,
/// plus the prior spec (uniform unless --prior).
fn load_probs(
    args: &CodeArgs,
    grade_table: &GradeTable,
    default_convert: ConvertType,
) -> Result<(CondProbMatrix, PriorSpec)> {
    let probs = if args.train.is_some() {
        let (train, labels) = load_training(args)?;
        let convert = parse_convert_type(args, default_convert)?;
        train_condprob(&train.matrix, &labels, None, grade_table, convert)?
    } else if let Some(path) = &args.probbase {
        load_probbase_csv(crate::artifacts::open(path)?, grade_table)?
    } else {
        return Err(VaError::Config(format!(
            "{} needs --train with --train-causes, or a --probbase table",
            args.model
        )));
    };
    let spec = match &args.prior {
        Some(path) => align_prior(load_prior_csv(crate::artifacts::open(path)?)?, probs.causes())?,
        None => PriorSpec::uniform(probs.causes().to_vec()),
    };
    Ok((probs, spec))
}

fn report_drops(ctx: &Ctx, dropped_data: &[String], dropped_probs: &[String]) {
    if !dropped_data.is_empty() {
        ctx.info(format!(
            "{} data column(s) have no probability row and were ignored: {}",
            dropped_data.len(),
            dropped_data.join(", ")
        ));
    }
    if !dropped_probs.is_empty() {
        ctx.info(format!(
            "{} probability row(s) have no data column and were ignored: {}",
            dropped_probs.len(),
            dropped_probs.join(", ")
        ));
    }
}

fn interva(ctx: &Ctx, args: &CodeArgs, data: &CanonicalTable, mut mb: ManifestBuilder) -> Result<()> {
    let grade_table = match &args.grades {
        Some(path) => GradeTable::from_csv(crate::artifacts::open(path)?)?,
        None => GradeTable::standard(),
    };
    let config = IntervaConfig {
        version: args.version.parse()?,
        hiv: args.hiv.parse()?,
        malaria: args.malaria.parse()?,
        floor: args.floor,
        ratio_gate: args.ratio_gate,
        ..IntervaConfig::default()
    };
    mb.option("version", &args.version);
    mb.option("hiv", &args.hiv);
    mb.option("malaria", &args.malaria);
    mb.option("floor", args.floor);

    let (probs, prior_spec) = load_probs(args, &grade_table, ConvertType::Quantile)?;
    let prior = prior_spec.adjusted(&config)?;
    let aligned = align(&data.matrix, &probs)?;
    report_drops(ctx, &aligned.dropped_data, &aligned.dropped_probs);
    let mask = screening_mask(ctx, args, &aligned.data, &aligned.probs)?;

    let (result, degenerate) =
        interva_code(&aligned.data, &aligned.probs, &prior, &config, mask.as_ref())?;
    if !degenerate.is_empty() {
        ctx.info(format!(
            "{} record(s) excluded every cause and fell back to the prior",
            degenerate.len()
        ));
        let ids: Vec<&str> = degenerate.iter().map(|&i| result.ids()[i].as_str()).collect();
        mb.option("degenerate_evidence_ids", ids);
    }
    let csmf = interva_csmf(&result)?;

    let indiv = args.output.join("indiv_prob.csv");
    write_atomic(
        &indiv,
        &grid_to_csv(result.ids(), &result.column_names(), result.point())?,
    )?;
    let csmf_path = args.output.join("csmf.csv");
    write_atomic(&csmf_path, &csmf_to_csv(&csmf)?)?;
    let top = write_top_cod(
        &args.output,
        &get_top_cod(&CoderOutput::Probs(&result)),
        "probability",
    )?;
    for p in [&indiv, &csmf_path, &top] {
        mb.output(p);
    }
    ctx.info(format!("coded {} records to {}", result.n_records(), args.output.display()));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}

fn nbc(ctx: &Ctx, args: &CodeArgs, data: &CanonicalTable, mut mb: ManifestBuilder) -> Result<()> {
    if args.train.is_none() {
        return Err(VaError::Config(
            "the naive Bayes classifier requires training data (--train, --train-causes)".into(),
        ));
    }
    let (train, labels) = load_training(args)?;
    let model = nbc_train(&train.matrix, &labels, None, args.alpha, args.uniform_prior)?;
    mb.option("alpha", args.alpha);
    mb.option("uniform_prior", args.uniform_prior);

    let aligned = align(&data.matrix, model.probs())?;
    report_drops(ctx, &aligned.dropped_data, &aligned.dropped_probs);
    // Rebuild the model on the shared symptom subset.
    let model = va_core::nbc::NbcModel::new(
        aligned.probs.clone(),
        model.prior().clone(),
        model.alpha(),
    )?;
    let mask = screening_mask(ctx, args, &aligned.data, model.probs())?;

    let result = nbc_code(&aligned.data, &model, mask.as_ref())?;
    let csmf = nbc_csmf(&result)?;

    let indiv = args.output.join("indiv_prob.csv");
    write_atomic(
        &indiv,
        &grid_to_csv(result.ids(), &result.column_names(), result.point())?,
    )?;
    let csmf_path = args.output.join("csmf.csv");
    write_atomic(&csmf_path, &csmf_to_csv(&csmf)?)?;
    let top = write_top_cod(
        &args.output,
        &get_top_cod(&CoderOutput::Probs(&result)),
        "probability",
    )?;
    for p in [&indiv, &csmf_path, &top] {
        mb.output(p);
    }
    ctx.info(format!("coded {} records to {}", result.n_records(), args.output.display()));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}

fn tariff(ctx: &Ctx, args: &CodeArgs, data: &CanonicalTable, mut mb: ManifestBuilder) -> Result<()> {
    if args.train.is_none() {
        return Err(VaError::Config(
            "Tariff requires training data (--train, --train-causes)".into(),
        ));
    }
    let (train, labels) = load_training(args)?;
    let model = tariff_train(&train.matrix, &labels, None, args.bootstrap, ctx.seed)?;
    mb.option("bootstrap", args.bootstrap);
    mb.seed(ctx.seed);

    // Tariff scores need every training symptom; reorder data to match.
    let indices: Vec<usize> = model
        .symptoms()
        .iter()
        .map(|s| {
            data.matrix.symptom_index(s).ok_or_else(|| {
                VaError::Validation(format!("data lacks training symptom {:?}", s))
            })
        })
        .collect::<Result<_>>()?;
    let matrix = data.matrix.select_symptoms(&indices);

    let mask = match (args.screen, &args.demographics) {
        (false, None) => None,
        _ => {
            // The screen reads zero-probability cells, which tariff scores
            // do not have; reuse the trained frequencies instead.
            let freq = train_condprob(
                &train.matrix,
                &labels,
                None,
                &GradeTable::standard(),
                ConvertType::Empirical,
            )?;
            let aligned = align(&matrix, &freq)?;
            screening_mask(ctx, args, &aligned.data, &aligned.probs)?
        }
    };

    let results = tariff_code(&matrix, &model, mask.as_ref())?;
    let csmf = tariff_csmf(&results)?;

    let ranks = args.output.join("ranks.csv");
    let cause_names: Vec<&str> = results.causes.names().iter().map(|s| s.as_str()).collect();
    write_atomic(&ranks, &grid_to_csv(&results.ids, &cause_names, &results.ranks)?)?;
    let csmf_path = args.output.join("csmf.csv");
    write_atomic(&csmf_path, &csmf_to_csv(&csmf)?)?;
    let top = write_top_cod(
        &args.output,
        &get_top_cod(&CoderOutput::Tariff(&results)),
        "rank",
    )?;
    for p in [&ranks, &csmf_path, &top] {
        mb.output(p);
    }
    ctx.info(format!("coded {} records to {}", results.ids.len(), args.output.display()));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}

/// Loads debiased physician posteriors from a CSV (`ID` + one column per
/// category). A column named `unknown` carries no information: its mass
/// is spread back over the substantive categories.
fn read_debias_csv(path: &Path, unknown: &str) -> Result<DebiasResult> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(crate::artifacts::open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    if header.first().map(String::as_str) != Some("ID") {
        return Err(VaError::Format(format!(
            "first column of {} must be named \"ID\"",
            path.display()
        )));
    }
    let unknown_idx = header.iter().position(|h| h == unknown);
    let categories: Vec<String> = header[1..]
        .iter()
        .filter(|h| h.as_str() != unknown)
        .cloned()
        .collect();
    if categories.len() < 2 {
        return Err(VaError::Format(format!(
            "{} needs at least two substantive category columns",
            path.display()
        )));
    }

    let mut death_ids = Vec::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        death_ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(categories.len());
        for (idx, _) in header.iter().enumerate().skip(1) {
            if Some(idx) == unknown_idx {
                continue;
            }
            let cell = record.get(idx).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                VaError::Format(format!("{}: non-numeric cell {:?}", path.display(), cell))
            })?;
            if !(0.0..=1.0 + 1e-9).contains(&v) {
                return Err(VaError::Format(format!(
                    "{}: posterior {} outside [0,1]",
                    path.display(),
                    v
                )));
            }
            row.push(v);
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in &mut row {
                *v /= sum;
            }
        } else {
            // Entirely unknown: no information about this death.
            row = vec![1.0 / categories.len() as f64; categories.len()];
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(VaError::Format(format!("{} has no rows", path.display())));
    }
    let posteriors = Grid::from_rows(rows, categories.len())?;
    let marginal = vec![1.0 / categories.len() as f64; categories.len()];
    Ok(DebiasResult {
        death_ids,
        categories,
        posteriors,
        physicians: Vec::new(),
        confusion: Vec::new(),
        marginal,
        iterations: 0,
        converged: true,
        log_likelihoods: Vec::new(),
    })
}

/// Code/reviewer column pairs: explicit `code:rev,…` or inferred from a
/// `ID,code1,rev1,code2,rev2,…` header.
fn physician_pairs(path: &Path, explicit: Option<&str>) -> Result<Vec<(String, String)>> {
    if let Some(spec) = explicit {
        let mut pairs = Vec::new();
        for item in spec.split(',') {
            let (code, rev) = item.split_once(':').ok_or_else(|| {
                VaError::Config(format!(
                    "--phy-pairs entries look like code:reviewer, got {:?}",
                    item
                ))
            })?;
            pairs.push((code.trim().to_string(), rev.trim().to_string()));
        }
        return Ok(pairs);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(crate::artifacts::open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let mut pairs = Vec::new();
    let mut i = 1;
    while i < header.len() {
        if i + 1 < header.len() && header[i + 1].to_ascii_lowercase().starts_with("rev") {
            pairs.push((header[i].clone(), header[i + 1].clone()));
            i += 2;
        } else {
            return Err(VaError::Format(format!(
                "column {:?} has no reviewer column; pass explicit --phy-pairs code:rev,…",
                header[i]
            )));
        }
    }
    if pairs.is_empty() {
        return Err(VaError::Format(
            "physician file has no code/reviewer columns after ID".into(),
        ));
    }
    Ok(pairs)
}

/// Physician posteriors → per-record priors, fitting the rater model
/// first when raw codes were given. Returns the priors and the debias
/// artifact path (written only for raw input).
fn physician_priors(
    ctx: &Ctx,
    args: &CodeArgs,
    causes: &CauseList,
    data_ids: &[String],
    mb: &mut ManifestBuilder,
) -> Result<Option<RecordPriors>> {
    let debias = match (&args.phy_debias, &args.phy_raw) {
        (None, None) => return Ok(None),
        (Some(_), Some(_)) => {
            return Err(VaError::Config(
                "--phy-debias and --phy-raw are mutually exclusive".into(),
            ))
        }
        (Some(path), None) => {
            mb.input_file(path)?;
            read_debias_csv(path, &args.phy_unknown)?
        }
        (None, Some(path)) => {
            mb.input_file(path)?;
            let pairs = physician_pairs(path, args.phy_pairs.as_deref())?;
            let codes = read_physician_csv(crate::artifacts::open(path)?, &pairs, &args.phy_unknown)?;
            let opts = DebiasOptions {
                tol: args.phy_tol,
                max_itr: args.phy_max_itr,
                ..DebiasOptions::default()
            };
            let result = physician_debias(&codes, &opts)?;
            ctx.info(format!(
                "rater model: {} iterations, converged={}",
                result.iterations, result.converged
            ));
            let out = args.output.join("debias.csv");
            let mut wtr = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["ID".to_string()];
            header.extend(result.categories.iter().cloned());
            wtr.write_record(&header)?;
            for (i, id) in result.death_ids.iter().enumerate() {
                let mut row = vec![id.clone()];
                row.extend(result.posteriors.row(i).iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
            write_atomic(&out, &wtr.into_inner().expect("csv flush to memory"))?;
            mb.output(&out);
            result
        }
    };
    let map_path = args.phy_cat.as_ref().ok_or_else(|| {
        VaError::Config("physician priors need --phy-cat mapping causes to categories".into())
    })?;
    mb.input_file(map_path)?;
    let map = CauseCategoryMap::from_csv(crate::artifacts::open(map_path)?)?;
    // Surface inconsistent mappings before the fit.
    let _ = map_to_causes(&debias, &map)?;
    let priors = physician_prior_grid(
        &debias,
        &map,
        causes,
        data_ids,
        args.phy_external.as_deref(),
        args.phy_threshold,
    )?;
    Ok(Some(priors))
}

fn insilico(ctx: &Ctx, args: &CodeArgs, data: &CanonicalTable, mut mb: ManifestBuilder) -> Result<()> {
    let grade_table = match &args.grades {
        Some(path) => GradeTable::from_csv(crate::artifacts::open(path)?)?,
        None => GradeTable::standard(),
    };
    let config = InsilicoConfig {
        nsim: args.nsim,
        burn_in_fraction: args.burn_in,
        thin: args.thin,
        auto_length: args.auto_length,
        ci: args.indiv_ci,
        seed: ctx.seed,
        reestimate_levels: args.reestimate_levels,
        keep_indiv_draws: !args.no_indiv,
        ..InsilicoConfig::default()
    };
    mb.seed(ctx.seed);
    mb.option("nsim", args.nsim);
    mb.option("thin", args.thin);
    mb.option("burn_in", args.burn_in);
    mb.option("auto_length", args.auto_length);
    mb.option("ci", args.indiv_ci);

    let (probs, _prior) = load_probs(args, &grade_table, ConvertType::Empirical)?;
    if args.reestimate_levels && probs.grades().is_none() {
        return Err(VaError::Config(
            "--reestimate-levels needs a graded table; train with --convert-type fixed \
             or quantile, or supply --probbase"
                .into(),
        ));
    }
    let aligned = align(&data.matrix, &probs)?;
    report_drops(ctx, &aligned.dropped_data, &aligned.dropped_probs);

    let groups: Option<Vec<String>> = match &args.subpop {
        Some(cols) => {
            let names = split_list(cols);
            let columns: Vec<(&str, &[String])> = names
                .iter()
                .map(|name| {
                    let values = data.meta_column(name).expect("read with this meta column");
                    (name.as_str(), values)
                })
                .collect();
            mb.option("subpop", &names);
            Some(subpop_labels(&columns, data.matrix.n_records())?)
        }
        None => None,
    };

    let cause_list = CauseList::new(aligned.probs.causes().to_vec())?;
    let priors = physician_priors(ctx, args, &cause_list, aligned.data.ids(), &mut mb)?;
    let mask = screening_mask(ctx, args, &aligned.data, &aligned.probs)?;

    let sample = insilico_fit(
        &aligned.data,
        &aligned.probs,
        &config,
        groups.as_deref(),
        priors.as_ref(),
        mask.as_ref(),
    )?;
    write_insilico_outputs(ctx, args, &sample, mb)
}

fn write_insilico_outputs(
    ctx: &Ctx,
    args: &CodeArgs,
    sample: &PosteriorSample,
    mut mb: ManifestBuilder,
) -> Result<()> {
    let csmf = insilico_csmf_summary(sample)?;
    let csmf_path = args.output.join("csmf.csv");
    write_atomic(&csmf_path, &csmf_to_csv(&csmf)?)?;
    mb.output(&csmf_path);

    if !args.no_indiv {
        let summary = insilico_indiv_summary(sample, args.indiv_ci)?;
        let q = summary.quantiles().expect("summary carries quantiles");
        let columns = summary.column_names();
        for (name, grid) in [
            ("indiv_prob_mean.csv", &q.mean),
            ("indiv_prob_median.csv", &q.median),
            ("indiv_prob_lower.csv", &q.lower),
            ("indiv_prob_upper.csv", &q.upper),
        ] {
            let path = args.output.join(name);
            write_atomic(&path, &grid_to_csv(summary.ids(), &columns, grid)?)?;
            mb.output(&path);
        }
        let top = write_top_cod(
            &args.output,
            &get_top_cod(&CoderOutput::Probs(&summary)),
            "probability",
        )?;
        mb.output(&top);
    }

    if args.emit_draws {
        let path = args.output.join("draws.csv");
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["group".to_string(), "draw".to_string()];
        header.extend(sample.causes.iter().cloned());
        wtr.write_record(&header)?;
        for (g, draws) in sample.csmf_draws.iter().enumerate() {
            for d in 0..draws.nrows() {
                let mut row = vec![sample.groups[g].clone(), d.to_string()];
                row.extend(draws.row(d).iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
        }
        write_atomic(&path, &wtr.into_inner().expect("csv flush to memory"))?;
        mb.output(&path);
    }

    let report = insilico_convergence(sample);
    let max_abs_z = report
        .z_scores
        .iter()
        .map(|(_, _, z)| z.abs())
        .fold(0.0f64, f64::max);
    let exceeding = report
        .z_scores
        .iter()
        .filter(|(_, _, z)| z.abs() > report.threshold)
        .count();
    let acceptance: serde_json::Map<String, serde_json::Value> = sample
        .groups
        .iter()
        .zip(&sample.acceptance)
        .map(|(g, a)| (g.clone(), serde_json::json!(a)))
        .collect();
    let diagnostics = serde_json::json!({
        "model": "insilico",
        "seed": sample.seed,
        "nsim": sample.nsim,
        "burn_in": sample.burn_in,
        "thin": sample.thin,
        "retained": sample.retained(),
        "doublings": sample.doublings,
        "converged": sample.converged,
        "inconclusive": sample.inconclusive,
        "acceptance": acceptance,
        "stationarity": {
            "threshold": report.threshold,
            "chains": report.z_scores.len(),
            "max_abs_z": max_abs_z,
            "exceeding": exceeding,
            "passed": report.passed,
            "inconclusive": report.inconclusive,
        },
        "levels": sample.levels.as_ref().map(|ls| {
            ls.iter()
                .map(|(label, v)| (label.clone(), serde_json::json!(v)))
                .collect::<serde_json::Map<_, _>>()
        }),
    });
    let diag_path = args.output.join("diagnostics.json");
    let mut bytes = serde_json::to_vec_pretty(&diagnostics)
        .map_err(|e| VaError::Validation(format!("diagnostics serialization: {}", e)))?;
    bytes.push(b'\n');
    write_atomic(&diag_path, &bytes)?;
    mb.output(&diag_path);

    if !sample.converged && !sample.inconclusive {
        ctx.info("warning: stationarity check failed; consider --auto-length or more sweeps");
    }
    ctx.info(format!(
        "sampled {} draws over {} group(s) to {}",
        sample.retained(),
        sample.groups.len(),
        args.output.display()
    ));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}
