//! Command-line front end: one-shot fusion, the nmCI versus SDP comparison
//! and Monte Carlo tracking runs. Every invocation writes into a fresh
//! timestamped directory under `--out` together with a `manifest.json`.

pub mod compare;
pub mod error;
pub mod fuse;
pub mod output;
pub mod track;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "nmci", version, about = "Conservative Gaussian fusion and tracking experiments")]
pub struct Cli {
    /// Base directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads; all available cores when omitted.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse two estimate files.
    Fuse(fuse::FuseArgs),
    /// Sweep the SDP sample count against the nmCI bound.
    Compare(compare::CompareArgs),
    /// Run the multi-agent tracking simulation.
    Track(track::TrackArgs),
}

/// Result of a successful command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub message: String,
}

/// Run `f` on a rayon pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(0) => Err(CliError::Config("--jobs must be positive".into())),
        Some(j) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if cli.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    match &cli.command {
        Command::Fuse(args) => {
            let (dir, _, record) = fuse::cmd_fuse(args, &cli.out, cli.jobs)?;
            let mut message = format!("{} fusion, trace {:.6}", record.method, record.trace);
            if let Some(omega) = &record.omega {
                message += &format!(", omega {omega:?}");
            }
            message += &format!("\noutput: {}", dir.join(fuse::OUTPUT).display());
            Ok(Outcome { dir, message })
        }
        Command::Compare(args) => {
            let o = compare::cmd_compare(args, &cli.out, cli.jobs)?;
            Ok(Outcome { dir: o.dir, message: o.message })
        }
        Command::Track(args) => {
            let o = track::cmd_track(args, &cli.out, cli.jobs)?;
            Ok(Outcome { dir: o.dir, message: o.message })
        }
    }
}
