use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use utilprice_cli::run::bench_csv;
use utilprice_cli::{parse_config, run_bench, run_check, run_price, CliError, RunConfig};

#[derive(Parser)]
#[command(version, about = "Indifference prices of European options under transaction costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve both value functions and write price_curve.csv and report.txt
    Price {
        #[arg(long)]
        config: PathBuf,
        /// (alpha, beta) of the price curve, snapped to the nearest node
        #[arg(long, value_parser = parse_pair)]
        slice: Option<(f64, f64)>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Time the solver on the base grid and on grids with N_S, N_alpha,
    /// N_beta scaled by the given factors
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "scale-dims", value_parser = parse_scale, default_value = "2,2,2")]
        scale_dims: [usize; 3],
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Run the property checks only
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected ALPHA,BETA")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_scale(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[fs, fa, fb] if fs > 0 && fa > 0 && fb > 0 => Ok([fs, fa, fb]),
        _ => Err("expected three positive factors S,alpha,beta".into()),
    }
}

fn load(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        line: None,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_config(&text)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Price { config, slice, out } => {
            let mut cfg = load(&config)?;
            cfg.out_dir = out;
            if let Some(s) = slice {
                cfg.slice = s;
            }
            let run = run_price(&cfg)?;
            let mut out = std::io::stdout().lock();
            for c in &run.checks {
                let _ = writeln!(out, "{}", c.line());
            }
            let _ = writeln!(out, "wrote {}", cfg.out_dir.join("price_curve.csv").display());
            Ok(true)
        }
        Command::Bench { config, scale_dims, repeats } => {
            let cfg = load(&config)?;
            let _ = write!(std::io::stdout().lock(), "{}", bench_csv(&run_bench(&cfg, scale_dims, repeats)?));
            Ok(true)
        }
        Command::Check { config } => {
            let cfg = load(&config)?;
            let checks = run_check(&cfg)?;
            let mut out = std::io::stdout().lock();
            for c in &checks {
                let _ = writeln!(out, "{}", c.line());
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
