use std::path::PathBuf;

use clap::Args;
use va_core::report::{csmf_accuracy_aligned, empirical_csmf, UndeterminedHandling};
use va_core::{Result, VaError};

use crate::artifacts::{read_csmf, read_label_column, write_atomic};
use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Column of the truth file holding the reference causes.
    #[arg(long, default_value = "Cause")]
    truth_causes: String,

    /// Estimate column carrying unassigned mass.
    #[arg(long, default_value = "Undetermined")]
    undetermined: String,

    /// What to do with unassigned mass: renormalize or drop.
    #[arg(long, default_value = "renormalize")]
    handling: String,

    /// Group label to score when the estimate covers several.
    #[arg(long)]
    which: Option<String>,

    /// Write `estimate,accuracy` here instead of stdout only.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,

    /// CSMF estimate: a csmf.csv file or a directory holding one.
    estimate: PathBuf,

    /// Deaths with reference causes (canonical CSV).
    truth: PathBuf,
}

pub fn run(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let estimate_path = if args.estimate.is_dir() {
        args.estimate.join("csmf.csv")
    } else {
        args.estimate.clone()
    };
    let est = read_csmf(&estimate_path)?;

    let group = match &args.which {
        Some(label) => est.group(label).ok_or_else(|| {
            let labels: Vec<&str> = est.groups().iter().map(|g| g.label.as_str()).collect();
            VaError::Config(format!(
                "estimate has no group {:?}; available: {}",
                label,
                labels.join(", ")
            ))
        })?,
        None => est.sole_group().ok_or_else(|| {
            let labels: Vec<&str> = est.groups().iter().map(|g| g.label.as_str()).collect();
            VaError::Config(format!(
                "estimate covers several groups ({}); pick one with --which",
                labels.join(", ")
            ))
        })?,
    };

    let handling = match args.handling.as_str() {
        "renormalize" => UndeterminedHandling::Renormalize,
        "drop" => UndeterminedHandling::DropMass,
        other => {
            return Err(VaError::Config(format!(
                "unknown handling {:?}; expected renormalize or drop",
                other
            )))
        }
    };

    let labels = read_label_column(&args.truth, &args.truth_causes)?;
    let truth_causes: Vec<String> = est
        .causes()
        .iter()
        .filter(|c| c.as_str() != args.undetermined)
        .cloned()
        .collect();
    let truth = empirical_csmf(&labels, &truth_causes)?;

    let accuracy = csmf_accuracy_aligned(
        est.causes(),
        &group.point,
        &truth_causes,
        &truth,
        Some(&args.undetermined),
        handling,
    )?;

    println!("csmf_accuracy {}", accuracy);

    let emit_manifest = args.output.is_some() || ctx.manifest_dir.is_some();
    if emit_manifest {
        let mut mb = ManifestBuilder::new("evaluate");
        mb.input_file(&estimate_path)?;
        mb.input_file(&args.truth)?;
        mb.option("handling", &args.handling);
        mb.option("undetermined", &args.undetermined);
        mb.option("group", &group.label);
        mb.option("accuracy", accuracy);
        let primary = match &args.output {
            Some(path) => {
                let mut wtr = csv::Writer::from_writer(Vec::new());
                wtr.write_record(["estimate", "accuracy"])?;
                wtr.write_record([
                    estimate_path.display().to_string(),
                    accuracy.to_string(),
                ])?;
                write_atomic(path, &wtr.into_inner().expect("csv flush to memory"))?;
                mb.output(path);
                path.clone()
            }
            None => estimate_path.clone(),
        };
        mb.finish(&primary, ctx.manifest_dir.as_deref())?;
    }
    Ok(())
}
