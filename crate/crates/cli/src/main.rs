use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use semiweyl::cli::{error_kind, exit_code, parse_config_for, run, Experiment};
use semiweyl::Error;

/// Runs one semiclassical experiment and writes its CSV.
#[derive(Debug, Parser)]
#[command(name = "semiweyl", version)]
struct Args {
    /// trace_formula, weyl_law, funcalc_check, moyal_check, extension_check or class_check
    experiment: String,
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the `output` key, then the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for sampling oracles; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(err: &Error) -> ExitCode {
    let code = exit_code(err);
    eprintln!("error kind={} exit={code} message={err}", error_kind(err));
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    let Some(experiment) = Experiment::parse(&args.experiment) else {
        return fail(&Error::Configuration(format!("unknown experiment '{}'", args.experiment)));
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            return fail(&Error::Configuration(format!("cannot read {}: {e}", args.config.display())));
        }
    };
    let mut cfg = match parse_config_for(&text, Some(experiment)) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return fail(&Error::Configuration("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return fail(&Error::Configuration(format!("cannot start thread pool: {e}")));
        }
    }
    let out = args
        .out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match run(&cfg, &out) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
