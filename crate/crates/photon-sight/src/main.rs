use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use photon_sight::config::{parse_config, Command};
use photon_sight::runner::execute;

/// Simulator and inference toolkit for single-photon vision experiments.
#[derive(Parser, Debug)]
#[command(name = "photon-sight", version, about)]
struct Cli {
    /// Command to run; must match the `command` key in the config file.
    command: String,
    /// Path to the run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed override; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn fail(kind: &str, detail: serde_json::Value) -> ExitCode {
    let payload = json!({ "error": kind, "detail": detail });
    eprintln!("{payload}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let command = match Command::parse(&cli.command) {
        Some(c) => c,
        None => {
            return fail(
                "unknown-command",
                json!(format!(
                    "'{}' is not one of source-stats, hecht, afc, superposition, bell, fit, power",
                    cli.command
                )),
            )
        }
    };

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return fail("config-read", json!(format!("{}: {e}", cli.config.display()))),
    };

    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(issues) => {
            let rendered: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
            return fail("config-invalid", json!(rendered));
        }
    };

    if config.command != command {
        return fail(
            "command-mismatch",
            json!(format!(
                "command line says '{}' but config says '{}'",
                command.name(),
                config.command.name()
            )),
        );
    }
    if let Some(dir) = cli.output {
        config.output_dir = dir;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match execute(&config) {
        Ok(out) => {
            println!("{}", out.headline);
            ExitCode::SUCCESS
        }
        Err(e) => fail("run-failed", json!(e.to_string())),
    }
}
