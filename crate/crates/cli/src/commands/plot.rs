use std::path::{Path, PathBuf};

use clap::Args;
use va_core::model::{CSMFEstimate, CsmfGroup, CsmfSummary};
use va_core::report::{aggregate_csmf, emit_plot, CauseGrouping, PlotKind, PlotOptions};
use va_core::{Result, VaError};

use crate::artifacts::{read_csmf, write_atomic};
use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct PlotArgs {
    /// Chart shape: bar, stacked, dodge, compare, or subpop.
    #[arg(long)]
    kind: String,

    /// Causes per bar chart (and per compare series).
    #[arg(long, default_value_t = 10)]
    top: usize,

    /// Aggregate causes into broader groups first (cause,group CSV).
    #[arg(long, value_name = "FILE")]
    grouping: Option<PathBuf>,

    /// Comma-separated display order for the aggregated groups.
    #[arg(long, value_name = "GROUPS")]
    order_group: Option<String>,

    /// Plot this sub-population only.
    #[arg(long)]
    which: Option<String>,

    /// Comma-separated causes to keep, in estimate order.
    #[arg(long, value_name = "CAUSES")]
    causelist: Option<String>,

    /// Chart title.
    #[arg(long)]
    title: Option<String>,

    /// CSMF estimates: csmf.csv files or directories holding one.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,

    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    output: PathBuf,
}

/// Series label for an input: the directory holding the csmf.csv.
fn series_label(input: &Path) -> String {
    let dir = if input.is_dir() {
        input
    } else {
        input.parent().unwrap_or(input)
    };
    dir.file_name()
        .map(|n| n.to_string_lossy().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| {
            input
                .file_stem()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "estimate".to_string())
        })
}

fn pad(values: &[f64], slot: &[Option<usize>]) -> Vec<f64> {
    slot.iter()
        .map(|s| s.map_or(0.0, |k| values[k]))
        .collect()
}

/// Stacks several estimates into one: causes become the union (first
/// appearance wins the order, absentees count zero) and group labels are
/// qualified by their source when the source had sub-populations.
fn merge(loaded: Vec<(String, CSMFEstimate)>) -> Result<CSMFEstimate> {
    let mut causes: Vec<String> = Vec::new();
    for (_, est) in &loaded {
        for c in est.causes() {
            if !causes.contains(c) {
                causes.push(c.clone());
            }
        }
    }
    let mut groups = Vec::new();
    for (label, est) in &loaded {
        // Position of each union cause inside this estimate.
        let slot: Vec<Option<usize>> = causes
            .iter()
            .map(|c| est.causes().iter().position(|e| e == c))
            .collect();
        let sole = est.groups().len() == 1;
        for g in est.groups() {
            let merged_label = if sole && g.label == CSMFEstimate::ALL {
                label.clone()
            } else {
                format!("{} {}", label, g.label)
            };
            if groups.iter().any(|g: &CsmfGroup| g.label == merged_label) {
                return Err(VaError::Config(format!(
                    "two inputs produce the series label {:?}; rename a directory",
                    merged_label
                )));
            }
            groups.push(CsmfGroup {
                label: merged_label,
                point: pad(&g.point, &slot),
                summary: g.summary.as_ref().map(|s| CsmfSummary {
                    mean: pad(&s.mean, &slot),
                    sd: pad(&s.sd, &slot),
                    lower: pad(&s.lower, &slot),
                    median: pad(&s.median, &slot),
                    upper: pad(&s.upper, &slot),
                }),
            });
        }
    }
    CSMFEstimate::new(causes, groups)
}

pub fn run(ctx: &Ctx, args: PlotArgs) -> Result<()> {
    let kind: PlotKind = args.kind.parse()?;
    let mut mb = ManifestBuilder::new("plot");
    mb.option("kind", &args.kind);
    mb.option("top", args.top);

    let mut loaded = Vec::with_capacity(args.inputs.len());
    for input in &args.inputs {
        let path = if input.is_dir() {
            input.join("csmf.csv")
        } else {
            input.clone()
        };
        mb.input_file(&path)?;
        let label = series_label(input);
        if loaded.iter().any(|(l, _)| *l == label) {
            return Err(VaError::Config(format!(
                "two inputs share the series label {:?}; rename a directory",
                label
            )));
        }
        loaded.push((label, read_csmf(&path)?));
    }
    let mut est = if loaded.len() == 1 {
        loaded.pop().expect("one estimate").1
    } else {
        merge(loaded)?
    };

    if let Some(path) = &args.grouping {
        mb.input_file(path)?;
        let mut grouping = CauseGrouping::from_csv(crate::artifacts::open(path)?)?;
        if let Some(order) = &args.order_group {
            let order: Vec<String> = order.split(',').map(|s| s.trim().to_string()).collect();
            mb.option("order_group", &order);
            grouping = grouping.with_order(order)?;
        }
        if est.causes().iter().any(|c| c == va_core::interva::UNDETERMINED) {
            grouping = grouping.with_undetermined(va_core::interva::UNDETERMINED)?;
        }
        est = aggregate_csmf(&est, &grouping)?;
    } else if args.order_group.is_some() {
        return Err(VaError::Config(
            "--order-group only makes sense together with --grouping".into(),
        ));
    }

    let opts = PlotOptions {
        top: args.top,
        causelist: args
            .causelist
            .as_ref()
            .map(|s| s.split(',').map(|c| c.trim().to_string()).collect()),
        which: args.which.clone(),
        title: args.title.clone(),
    };
    for (key, value) in [("which", &opts.which), ("title", &opts.title)] {
        if let Some(v) = value {
            mb.option(key, v);
        }
    }
    if let Some(list) = &opts.causelist {
        mb.option("causelist", list);
    }

    let artifact = emit_plot(&est, kind, &opts)?;
    let svg_path = args.output.join(format!("csmf_{}.svg", args.kind));
    let csv_path = args.output.join(format!("csmf_{}.csv", args.kind));
    write_atomic(&svg_path, artifact.svg.as_bytes())?;
    write_atomic(&csv_path, artifact.data_csv.as_bytes())?;
    mb.output(&svg_path);
    mb.output(&csv_path);
    ctx.info(format!("wrote {} and {}", svg_path.display(), csv_path.display()));
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}
