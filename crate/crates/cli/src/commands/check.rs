use std::path::PathBuf;

use clap::Args;
use va_core::consistency::{data_check, CheckPolicy, SymptomHierarchy};
use va_core::model::SymptomValue;
use va_core::{Result, VaError};

use crate::artifacts::{read_canonical, write_atomic, write_canonical};
use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct CheckArgs {
    /// Hierarchy rules CSV
    /// (symptom,relation,higher_symptom,trigger_value,implied_value,neonate_only).
    #[arg(long, value_name = "FILE")]
    hierarchy: PathBuf,

    /// Contradiction-handling policy: interva4, interva5, or insilico.
    #[arg(long)]
    policy: String,

    /// Write one row per changed cell.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,

    /// Extra non-symptom columns to pass through unchanged.
    #[arg(long, value_delimiter = ',')]
    meta: Vec<String>,

    input: PathBuf,

    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

fn parse_policy(s: &str) -> Result<CheckPolicy> {
    match s {
        "interva4" => Ok(CheckPolicy::InterVa4),
        "interva5" => Ok(CheckPolicy::InterVa5),
        "insilico" => Ok(CheckPolicy::InSilico),
        other => Err(VaError::Config(format!(
            "unknown policy {:?}; expected interva4, interva5, or insilico",
            other
        ))),
    }
}

fn word(v: SymptomValue) -> &'static str {
    match v {
        SymptomValue::Yes => "Yes",
        SymptomValue::No => "No",
        SymptomValue::Missing => "Missing",
    }
}

pub fn run(ctx: &Ctx, args: CheckArgs) -> Result<()> {
    let policy = parse_policy(&args.policy)?;
    let table = read_canonical(&args.input, &args.meta)?;
    let hierarchy = SymptomHierarchy::from_csv(crate::artifacts::open(&args.hierarchy)?)?;
    let (checked, log) = data_check(&table.matrix, &hierarchy, policy)?;
    write_canonical(&args.output, &checked, &table.meta)?;

    let mut mb = ManifestBuilder::new("check");
    mb.option("policy", &args.policy);
    mb.option("changed_cells", log.len());
    mb.input_file(&args.input)?;
    mb.input_file(&args.hierarchy)?;
    mb.output(&args.output);

    if let Some(path) = &args.log {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["record_id", "symptom", "original", "updated", "reason"])?;
        for entry in &log {
            wtr.write_record([
                entry.record_id.as_str(),
                entry.symptom.as_str(),
                word(entry.original),
                word(entry.updated),
                &entry.reason.to_string(),
            ])?;
        }
        write_atomic(path, &wtr.into_inner().expect("csv flush to memory"))?;
        mb.output(path);
    }

    ctx.info(format!(
        "checked {} records: {} cells changed",
        checked.n_records(),
        log.len()
    ));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}
