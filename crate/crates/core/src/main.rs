use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use perpetuity::cli::{cmd_estimate, cmd_oracle, cmd_verify, exit_code, RunConfig};
use perpetuity::error::{Error, Result};

#[derive(Parser)]
#[command(name = "perpetuity", version, about = "Rare-event tail estimation for perpetuities")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; fields left out take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// CSV destination (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-replication CSV dump (rep, tau, horizon, l_value).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Record wall-clock seconds per cell.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the estimator grid from the configuration.
    Estimate,
    /// Table preset: four levels, four truncations plus the randomized column.
    Table1,
    /// Figure preset: four levels, four truncations.
    Figure1,
    /// Check a*, the conditional sampler and the path envelope.
    Verify,
    /// Compare importance sampling with crude Monte Carlo at small x.
    Oracle,
}

fn config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match (&args.config, args.command) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Command::Figure1) => RunConfig::figure1(),
        (None, _) => RunConfig::table1(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = &args.trace {
        cfg.trace = Some(t.clone());
    }
    cfg.timing |= args.timing;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<()> {
    let cfg = config(args)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match args.command {
        Command::Estimate | Command::Table1 | Command::Figure1 => cmd_estimate(&cfg).map(|_| ()),
        Command::Verify => cmd_verify(&cfg).map(|_| ()),
        Command::Oracle => cmd_oracle(&cfg).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
