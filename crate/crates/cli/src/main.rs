//! `va` — verbal-autopsy coding pipeline.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 filesystem or
//! network failure. Every error prints one `error[<kind>]: <text>` line.

mod artifacts;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use va_core::{Result, VaError};

#[derive(Parser)]
#[command(
    name = "va",
    version,
    about = "Verbal-autopsy cause-of-death coding: fetch, convert, check, code, evaluate, plot"
)]
struct Cli {
    /// RNG seed for sampling coders (tariff bootstrap, insilico MCMC).
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress informational stderr output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Directory for run manifests (default: alongside outputs).
    #[arg(long, global = true, value_name = "DIR")]
    manifest_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download a public benchmark dataset.
    Fetch(commands::fetch::FetchArgs),
    /// Translate a survey export into the canonical tri-state format.
    Convert(commands::convert::ConvertArgs),
    /// Enforce symptom-hierarchy consistency rules.
    Check(commands::check::CheckArgs),
    /// Assign causes of death with one of the four coders.
    Code(commands::code::CodeArgs),
    /// Score an estimated CSMF against labeled deaths.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Render a CSMF estimate as an SVG chart plus its data CSV.
    Plot(commands::plot::PlotArgs),
    /// Run an ordered list of stages from a TOML file.
    Pipeline(commands::pipeline::PipelineArgs),
}

/// Global options every command sees.
pub struct Ctx {
    pub seed: u64,
    pub quiet: bool,
    pub manifest_dir: Option<PathBuf>,
}

impl Ctx {
    /// Informational line on stderr, silenced by --quiet.
    pub fn info(&self, line: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", line.as_ref());
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second initialization (pipeline stages) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
        manifest_dir: cli.manifest_dir,
    };
    match cli.command {
        Command::Fetch(args) => commands::fetch::run(&ctx, args),
        Command::Convert(args) => commands::convert::run(&ctx, args),
        Command::Check(args) => commands::check::run(&ctx, args),
        Command::Code(args) => commands::code::run(&ctx, args),
        Command::Evaluate(args) => commands::evaluate::run(&ctx, args),
        Command::Plot(args) => commands::plot::run(&ctx, args),
        Command::Pipeline(args) => commands::pipeline::run(&ctx, args),
    }
}

/// Entry point for pipeline stages: parse a synthesized argv and run it.
pub(crate) fn run_argv(argv: Vec<String>) -> Result<()> {
    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        let first = e.to_string();
        let first = first.lines().next().unwrap_or("invalid arguments").to_string();
        VaError::Config(format!("{} (argv: {})", first, argv.join(" ")))
    })?;
    execute(cli)
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => match execute(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
                ExitCode::from(if e.is_io() { 2 } else { 1 })
            }
        },
        Err(e) => {
            // --help and --version surface as clap "errors" but exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}
