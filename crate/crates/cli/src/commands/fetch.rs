use std::path::PathBuf;

use clap::Args;
use va_core::ingest::{fetch::phmrc_url, fetch_phmrc, PhmrcModule};
use va_core::{Result, VaError};

use crate::artifacts::write_atomic;
use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct FetchArgs {
    /// Data source; only "phmrc" is known.
    source: String,

    /// Dataset module: adult, child, or neonate.
    #[arg(long)]
    module: String,

    /// Keep only the first N data rows.
    #[arg(long)]
    rows: Option<usize>,

    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

pub fn run(ctx: &Ctx, args: FetchArgs) -> Result<()> {
    if args.source != "phmrc" {
        return Err(VaError::Config(format!(
            "unknown source {:?}; expected phmrc",
            args.source
        )));
    }
    let module: PhmrcModule = args.module.parse()?;
    let table = fetch_phmrc(module, args.rows)?;
    let mut bytes = Vec::new();
    table.to_csv(&mut bytes)?;
    write_atomic(&args.output, &bytes)?;
    ctx.info(format!(
        "fetched {} {} records ({} columns) to {}",
        table.rows.len(),
        module,
        table.header.len(),
        args.output.display()
    ));

    let mut mb = ManifestBuilder::new("fetch");
    mb.option("source", &args.source);
    mb.option("module", module.to_string());
    mb.option("rows", args.rows);
    mb.input_bytes(phmrc_url(module), &bytes);
    mb.output(&args.output);
    mb.finish(&args.output, ctx.manifest_dir.as_deref())?;
    Ok(())
}
