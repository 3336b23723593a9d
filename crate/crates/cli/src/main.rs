use std::path::PathBuf;
use std::process::ExitCode;

use basset_cli::{parse_config, run, Command, ConfigError, RunConfig};
use clap::{Parser, Subcommand};

/// Inertial particle dynamics with history forces.
#[derive(Parser)]
#[command(name = "basset", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration (optional for `verify`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Solver tolerance; overrides `solver.tol`.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Integrate each initial state and write trajectory CSVs.
    Simulate,
    /// Sensitivity matrices along each trajectory plus a JSON summary.
    Sensitivity,
    /// Run the verification suite; exit 1 if any check fails.
    Verify,
    /// Print the a-priori bound and its series trace.
    Bound,
    /// Forward then backward in time; print the round-trip errors.
    Reverse,
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Syntax(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None if matches!(cli.command, Cmd::Verify) => parse_config("[params]\nR = 1\nSt = 1\nRe = 1\n")?,
        None => return Err(ConfigError::Syntax("--config is required for this command".into())),
    };
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("basset: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("basset: configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Sensitivity => Command::Sensitivity,
        Cmd::Verify => Command::Verify,
        Cmd::Bound => Command::Bound,
        Cmd::Reverse => Command::Reverse,
    };
    match run(&cfg, command) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("basset: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
