use std::path::PathBuf;

use clap::Args;
use va_core::ingest::{
    convert_custom, parse_who2012, parse_who2016, CutoffMode, LabelMap, PhmrcCutoffTable,
    PhmrcModule, PhmrcOptions, RawTable, Tallies,
};
use va_core::model::SymptomMatrix;
use va_core::{Result, VaError};

use crate::artifacts::{write_atomic, write_canonical};
use crate::manifest::ManifestBuilder;
use crate::Ctx;

/// Pulls the named columns out of a raw table: returns the remaining
/// columns re-serialized as CSV bytes plus the extracted (name, values)
/// pairs in request order.
fn split_meta(raw: &RawTable, names: &[String]) -> Result<(Vec<u8>, Vec<(String, Vec<String>)>)> {
    let mut meta_idx = Vec::with_capacity(names.len());
    for name in names {
        let idx = raw.column(name).ok_or_else(|| {
            VaError::Format(format!("metadata column {:?} absent from the input", name))
        })?;
        meta_idx.push(idx);
    }
    let meta = names
        .iter()
        .zip(&meta_idx)
        .map(|(name, &c)| {
            let values = raw.rows.iter().map(|r| r[c].clone()).collect();
            (name.clone(), values)
        })
        .collect();
    let keep: Vec<usize> = (0..raw.header.len()).filter(|c| !meta_idx.contains(c)).collect();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(keep.iter().map(|&c| raw.header[c].as_str()))?;
    for row in &raw.rows {
        wtr.write_record(keep.iter().map(|&c| row[c].as_str()))?;
    }
    Ok((wtr.into_inner().expect("csv flush to memory"), meta))
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Input layout: who2012, who2016, phmrc-adult, phmrc-child,
    /// phmrc-neonate, or custom.
    #[arg(long)]
    from: String,

    /// PHMRC dichotomization mode: default or adapt.
    #[arg(long, default_value = "default")]
    cutoff: String,

    /// PHMRC cutoff table overriding the bundled one
    /// (header: symptom,source_column,comparator,cutoff).
    #[arg(long, value_name = "FILE")]
    cutoffs: Option<PathBuf>,

    /// PHMRC column holding the assigned cause (required for adapt mode).
    #[arg(long, value_name = "COL")]
    cause_column: Option<String>,

    /// Write the cutoff table actually applied.
    #[arg(long, value_name = "FILE")]
    emit_cutoffs: Option<PathBuf>,

    /// Custom format: tokens meaning Yes.
    #[arg(long, value_delimiter = ',', default_value = "Yes")]
    yes: Vec<String>,

    /// Custom format: tokens meaning No.
    #[arg(long, value_delimiter = ',', default_value = "No")]
    no: Vec<String>,

    /// Custom format: tokens meaning Missing.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "Don't know,Refused to answer"
    )]
    missing: Vec<String>,

    /// Custom format: fail on unrecognized tokens instead of mapping
    /// them to Missing.
    #[arg(long)]
    strict: bool,

    /// Custom format: comma-separated columns copied through unchanged
    /// (sites, regions — anything that is not a symptom answer).
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    meta: Vec<String>,

    input: PathBuf,

    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

pub fn run(ctx: &Ctx, args: ConvertArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("convert");
    mb.option("from", &args.from);
    mb.input_file(&args.input)?;

    let (matrix, meta, unrecognized): (SymptomMatrix, Vec<(String, Vec<String>)>, usize) =
        match args.from.as_str() {
            "who2012" | "who2016" => {
                let file = crate::artifacts::open(&args.input)?;
                let parsed = if args.from == "who2012" {
                    parse_who2012(file)?
                } else {
                    parse_who2016(file)?
                };
                (parsed.matrix, Vec::new(), parsed.unrecognized_tokens)
            }
            "custom" => {
                let labels = LabelMap::new(
                    args.yes.clone(),
                    args.no.clone(),
                    args.missing.clone(),
                )?;
                mb.option("yes", &args.yes);
                mb.option("no", &args.no);
                mb.option("missing", &args.missing);
                mb.option("strict", args.strict);
                if !args.meta.is_empty() {
                    mb.option("meta", &args.meta);
                }
                let raw = RawTable::from_csv(crate::artifacts::open(&args.input)?)?;
                let (symptom_csv, mut meta) = split_meta(&raw, &args.meta)?;
                let parsed = convert_custom(symptom_csv.as_slice(), &labels, args.strict)?;
                if let Some(causes) = parsed.causes {
                    meta.insert(0, ("Cause".to_string(), causes));
                }
                (parsed.matrix, meta, parsed.unrecognized_tokens)
            }
            "phmrc-adult" | "phmrc-child" | "phmrc-neonate" => {
                let module: PhmrcModule =
                    args.from.trim_start_matches("phmrc-").parse()?;
                let mode: CutoffMode = args.cutoff.parse()?;
                let cutoffs = match &args.cutoffs {
                    Some(path) => {
                        mb.input_file(path)?;
                        Some(PhmrcCutoffTable::from_csv(crate::artifacts::open(path)?)?)
                    }
                    None => None,
                };
                let opts = PhmrcOptions {
                    module,
                    mode,
                    cause_column: args.cause_column.clone(),
                    cutoffs,
                };
                mb.option("cutoff", &args.cutoff);
                mb.option("cause_column", &args.cause_column);
                let raw = RawTable::from_csv(crate::artifacts::open(&args.input)?)?;
                let converted = va_core::ingest::convert_phmrc(&raw, &opts)?;
                println!(
                    "tallies yes={} no={} missing={}",
                    converted.tallies.yes, converted.tallies.no, converted.tallies.missing
                );
                mb.option(
                    "tallies",
                    serde_json::json!({
                        "yes": converted.tallies.yes,
                        "no": converted.tallies.no,
                        "missing": converted.tallies.missing,
                    }),
                );
                if let Some(path) = &args.emit_cutoffs {
                    let mut bytes = Vec::new();
                    converted.cutoffs.to_csv(&mut bytes)?;
                    write_atomic(path, &bytes)?;
                    mb.output(path);
                }
                let mut meta = Vec::new();
                if let Some(causes) = converted.causes {
                    meta.push(("Cause".to_string(), causes));
                }
                meta.push(("site".to_string(), converted.sites));
                (converted.matrix, meta, converted.unrecognized_tokens)
            }
            other => {
                return Err(VaError::Config(format!(
                    "unknown input layout {:?}; expected who2012, who2016, phmrc-adult, \
                     phmrc-child, phmrc-neonate, or custom",
                    other
                )))
            }
        };

    write_canonical(&args.output, &matrix, &meta)?;
    let tallies = Tallies::from_matrix(&matrix);
    ctx.info(format!(
        "converted {} records x {} symptoms (yes={} no={} missing={}, {} unrecognized tokens)",
        matrix.n_records(),
        matrix.n_symptoms(),
        tallies.yes,
        tallies.no,
        tallies.missing,
        unrecognized
    ));
    mb.option("unrecognized_tokens", unrecognized);
    mb.output(&args.output);
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}
