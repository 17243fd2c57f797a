use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use toml::Value;
use va_core::{Result, VaError};

use crate::manifest::ManifestBuilder;
use crate::Ctx;

#[derive(Args)]
pub struct PipelineArgs {
    /// TOML file with an ordered list of [[stage]] tables.
    config: PathBuf,
}

#[derive(Deserialize)]
struct PipelineFile {
    #[serde(default)]
    stage: Vec<toml::Table>,
}

/// Keys consumed by the runner itself rather than forwarded as flags.
const STRUCTURAL_KEYS: [&str; 5] = ["name", "command", "input", "inputs", "output"];

fn scalar(stage: &str, key: &str, value: &Value) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Datetime(d) => Ok(d.to_string()),
        Value::Boolean(_) | Value::Array(_) | Value::Table(_) => Err(VaError::Config(format!(
            "stage {:?}: key {:?} must be a scalar here",
            stage, key
        ))),
    }
}

/// One stage table → the argv of the equivalent standalone invocation.
fn stage_argv(ctx: &Ctx, name: &str, command: &str, table: &toml::Table) -> Result<Vec<String>> {
    let mut argv = vec!["va".to_string(), command.to_string()];
    if ctx.quiet && !table.contains_key("quiet") {
        argv.push("--quiet".to_string());
    }
    if let Some(dir) = &ctx.manifest_dir {
        if !table.contains_key("manifest_dir") {
            argv.push("--manifest-dir".to_string());
            argv.push(dir.display().to_string());
        }
    }
    for (key, value) in table {
        if STRUCTURAL_KEYS.contains(&key.as_str()) {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Boolean(true) => argv.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(|v| scalar(name, key, v))
                    .collect::<Result<_>>()?;
                argv.push(flag);
                argv.push(joined.join(","));
            }
            other => {
                argv.push(flag);
                argv.push(scalar(name, key, other)?);
            }
        }
    }
    match (table.get("input"), table.get("inputs")) {
        (Some(_), Some(_)) => {
            return Err(VaError::Config(format!(
                "stage {:?}: give input or inputs, not both",
                name
            )))
        }
        (Some(v), None) => argv.push(scalar(name, "input", v)?),
        (None, Some(Value::Array(items))) => {
            for v in items {
                argv.push(scalar(name, "inputs", v)?);
            }
        }
        (None, Some(_)) => {
            return Err(VaError::Config(format!(
                "stage {:?}: inputs must be an array",
                name
            )))
        }
        (None, None) => {}
    }
    if let Some(v) = table.get("output") {
        argv.push("-o".to_string());
        argv.push(scalar(name, "output", v)?);
    }
    Ok(argv)
}

/// Sampling stages must pin their own seed, or reruns of the same file
/// could disagree.
fn check_seed(name: &str, command: &str, table: &toml::Table) -> Result<()> {
    if command != "code" || table.contains_key("seed") {
        return Ok(());
    }
    match table.get("model").and_then(Value::as_str) {
        Some("insilico") | Some("tariff") => Err(VaError::Config(format!(
            "stage {:?} runs a sampling coder; set an explicit seed",
            name
        ))),
        _ => Ok(()),
    }
}

pub fn run(ctx: &Ctx, args: PipelineArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        VaError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", args.config.display(), e),
        ))
    })?;
    let file: PipelineFile = toml::from_str(&text)
        .map_err(|e| VaError::Config(format!("{}: {}", args.config.display(), e)))?;
    if file.stage.is_empty() {
        ctx.info("pipeline file lists no stages; nothing to do");
        return Ok(());
    }

    let mut names: Vec<String> = Vec::with_capacity(file.stage.len());
    for (i, table) in file.stage.iter().enumerate() {
        let name = table
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| VaError::Config(format!("stage {} has no name", i + 1)))?;
        if names.iter().any(|n| n == name) {
            return Err(VaError::Config(format!("duplicate stage name {:?}", name)));
        }
        names.push(name.to_string());
        let command = table
            .get("command")
            .and_then(Value::as_str)
            .ok_or_else(|| VaError::Config(format!("stage {:?} has no command", name)))?;
        if command == "pipeline" {
            return Err(VaError::Config(format!(
                "stage {:?}: pipelines cannot nest",
                name
            )));
        }
        check_seed(name, command, table)?;
    }

    for (table, name) in file.stage.iter().zip(&names) {
        let command = table.get("command").and_then(Value::as_str).expect("validated");
        let argv = stage_argv(ctx, name, command, table)?;
        ctx.info(format!("stage {:?}: {}", name, argv.join(" ")));
        if let Err(e) = crate::run_argv(argv) {
            eprintln!("pipeline halted at stage {:?}", name);
            return Err(e);
        }
    }

    let mut mb = ManifestBuilder::new("pipeline");
    mb.input_file(&args.config)?;
    mb.option("stages", &names);
    mb.finish(&args.config, ctx.manifest_dir.as_deref())?;
    Ok(())
}
