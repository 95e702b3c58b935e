mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Certify,
    Simulate,
    Contraction,
    Integrated,
    Chaos,
    Pathchaos,
    Moments,
    Concentrate,
    Sharpness,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Simulate => "simulate",
            Command::Contraction => "contraction",
            Command::Integrated => "integrated",
            Command::Chaos => "chaos",
            Command::Pathchaos => "pathchaos",
            Command::Moments => "moments",
            Command::Concentrate => "concentrate",
            Command::Sharpness => "sharpness",
        }
    }
}

/// Certified constants and Monte Carlo checks for mean-field particle systems.
///
/// Exit status: 0 on success, 1 on configuration or runtime errors,
/// 2 when certification fails or a bound is violated.
#[derive(Debug, Parser)]
#[command(name = "meanfield", version)]
struct Cli {
    command: Command,
    /// Path to a `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Override applied after the file, as `section.key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let cfg = match config::parse_with_overrides(&text, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    ExitCode::from(commands::run(cli.command, cfg))
}
