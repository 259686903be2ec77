mod args;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use commands::{apply_flags, run, Context, InputError};
use report::{write_json, Report};

/// Invalid configuration, from a file, a flag or a spec.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Check commands that ran but reported failures.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Error category and exit code. Usage errors exit with 2 through clap.
fn categorize(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return ("config", 3);
        }
        if cause.is::<InputError>() {
            return ("input", 4);
        }
        if cause.is::<CheckFailed>() {
            return ("check", 5);
        }
        if let Some(facade_core::Error::Config(_)) = cause.downcast_ref::<facade_core::Error>() {
            return ("config", 3);
        }
        if cause.is::<std::io::Error>() {
            return ("io", 6);
        }
    }
    ("pipeline", 1)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Extract(_) => "extract",
        Command::Refine(_) => "refine",
        Command::Rasterize(_) => "rasterize",
        Command::Evaluate(_) => "evaluate",
        Command::Grammar(_) => "grammar",
        Command::Mesh(_) => "mesh",
        Command::Synth(_) => "synth",
        Command::LossesCheck(_) => "losses-check",
        Command::Reconstruct(_) => "reconstruct",
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let mut ctx = Context::load(&cli.common)?;
    apply_flags(&mut ctx, &cli.command);
    ctx.validate()?;
    let outcome = run(&ctx, &cli.command)?;

    let report = Report {
        command: command_name(&cli.command).into(),
        config_echo: ctx.config.clone(),
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        metrics: outcome.metrics,
        warnings: outcome.warnings,
        duration_ms: start.elapsed().as_millis() as u64,
    };
    let mut targets: Vec<PathBuf> = cli.common.report.iter().cloned().collect();
    if let Command::Reconstruct(a) = &cli.command {
        targets.push(a.out.join("report.json"));
    }
    for path in targets {
        write_json(&path, &report)?;
    }
    if let Some(msg) = outcome.failed {
        return Err(CheckFailed(msg).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = categorize(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
