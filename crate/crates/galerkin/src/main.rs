use clap::{Parser, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use galerkin::harness::{run, Command, ExperimentConfig, HarnessError, Preset};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Sample,
    Check,
    Audit,
    Simulate,
    Decay,
    Ergodic,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Sample => Command::Sample,
            Cmd::Check => Command::Check,
            Cmd::Audit => Command::Audit,
            Cmd::Simulate => Command::Simulate,
            Cmd::Decay => Command::Decay,
            Cmd::Ergodic => Command::Ergodic,
        }
    }
}

/// Spectral-Galerkin simulator and verification harness.
///
/// Exit codes: 0 success, 1 verdict failure, 2 numerical failure, 3 config error.
#[derive(Debug, Parser)]
#[command(name = "glsim", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: ou-linear, convex-quadratic, paper-final-remark, nonconvex-perturbed.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => Preset::from_name(name)
            .ok_or_else(|| HarnessError::Config(format!("unknown preset {name:?}")))?
            .config(),
        (None, None) => return Err(HarnessError::Config("one of --config or --preset is required".into())),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = resolve(&cli).and_then(|cfg| run(cli.command.into(), &cfg));
    match result {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            println!("manifest: {}", outcome.manifest.display());
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
