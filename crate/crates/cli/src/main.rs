//! `ksorbit`: lift sphere paths, find generalized periodic orbits of the
//! restricted three-body problem, validate and sample orbit databases.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 malformed input,
//! 3 pole selection failed, 4 orbit target not reached, 5 validation failed.

mod config;
mod find;
mod lift;
mod sample;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use config::RunConfig;

/// Environment variable overriding the default worker count.
const THREADS_ENV: &str = "KS_ORBITS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ksorbit",
    version,
    about = "Generalized periodic orbits through KS regularization"
)]
struct Cli {
    /// Worker threads (default: KS_ORBITS_THREADS, else the logical core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Horizontal lift of a sampled sphere path (JSON) to a CSV.
    Lift {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Find periodic orbits and write them to the orbit database.
    Find {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] db`.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Re-verify every record of an orbit database.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Overrides `[output] report`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sample one record on a uniform time grid.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Zero-based record index.
        #[arg(long)]
        id: usize,
        /// Time step in scaled time (period 1).
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the inertial ephemeris t, X, x, ξ.
        #[arg(long)]
        ephemeris: Option<PathBuf>,
    },
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub err: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, err: anyhow::Error) -> Self {
        Failure { code, err }
    }

    pub fn input(err: anyhow::Error) -> Self {
        Failure::new(2, err)
    }

    pub fn other(err: anyhow::Error) -> Self {
        Failure::new(1, err)
    }
}

fn worker_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    })
    .filter(|&n| n > 0)
}

fn load(path: &std::path::Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::input)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match cli.cmd {
        Command::Lift { input, output } => {
            let s = lift::run(&input, &output)?;
            println!(
                "lifted {} samples: max fiber residual {:.2e}, max horizontality residual {:.2e}",
                s.rows, s.max_fiber, s.max_horiz
            );
            match s.holonomy_angle {
                Some(a) => println!("holonomy angle {a:.15e} rad"),
                None => println!("path is not closed; no holonomy"),
            }
        }
        Command::Find { config, db } => {
            let cfg = load(&config)?;
            find::run(&cfg, db.as_deref(), &mut out)?;
        }
        Command::Validate { config, db, report } => {
            let cfg = load(&config)?;
            validate::run(&cfg, db.as_deref(), report.as_deref(), &mut out)?;
        }
        Command::Sample {
            config,
            db,
            id,
            dt,
            out: path,
            ephemeris,
        } => {
            let cfg = load(&config)?;
            let args = sample::SampleArgs {
                db: db.as_deref(),
                id,
                dt,
                out: &path,
                ephemeris: ephemeris.as_deref(),
            };
            let rows = sample::run(&cfg, &args)?;
            println!("wrote {rows} rows to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = worker_count(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            error!("could not size the worker pool: {e}");
        } else {
            info!("{n} worker threads");
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
