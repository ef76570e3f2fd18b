//! One-shot fusion of two estimate files.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use nmci::estimate::{rows_to_matrix, EstimateRecord};
use nmci::sdp::{robust_fuse_with, SolverOptions};
use nmci::{ci_fuse, exact_fuse, nmci_fuse, BlockMode, BlockPartition, CrossSparsityPattern, GaussianEstimate, SolverStatus};

use crate::error::{CliError, Result};
use crate::output::{read_text, RunDir, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FuseMethod {
    /// Monolithic covariance intersection.
    Ci,
    /// Non-monolithic CI over a block partition.
    Nmci,
    /// Sampled SDP bound over a cross-covariance sparsity pattern.
    Sdp,
    /// Best linear fusion with a known cross-covariance (`--cross`).
    Exact,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// First estimate (JSON with labels, mean, covariance).
    #[arg(long = "a", value_name = "FILE")]
    pub a: PathBuf,
    /// Second estimate.
    #[arg(long = "b", value_name = "FILE")]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "nmci")]
    pub method: FuseMethod,
    /// Fixed CI weight instead of the trace-optimal one (CI only).
    #[arg(long)]
    pub omega: Option<f64>,
    /// Block partition such as `0,1;2`.
    #[arg(long)]
    pub partition: Option<String>,
    /// Sparsity pattern file (JSON with dim_a, dim_b, zero_indices).
    #[arg(long, value_name = "FILE")]
    pub pattern: Option<PathBuf>,
    /// Known cross-covariance as a JSON matrix (exact only).
    #[arg(long, value_name = "FILE")]
    pub cross: Option<PathBuf>,
    /// Number of sampled cross-covariances (SDP only).
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Sampler seed (SDP only).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative duality-gap tolerance (SDP only).
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Solver step budget (SDP only).
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

pub const OUTPUT: &str = "fusion.json";

fn load_estimate(path: &Path) -> Result<GaussianEstimate> {
    let text = read_text(path)?;
    let record: EstimateRecord =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    GaussianEstimate::try_from(record).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_pattern(path: &Path) -> Result<CrossSparsityPattern> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    rows_to_matrix(&rows, "cross-covariance").map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn partition_arg(args: &FuseArgs) -> Result<Option<BlockPartition>> {
    args.partition
        .as_deref()
        .map(|s| s.parse::<BlockPartition>().map_err(|e| CliError::Config(format!("--partition: {e}"))))
        .transpose()
}

pub fn cmd_fuse(args: &FuseArgs, out: &Path, jobs: Option<usize>) -> Result<(PathBuf, RunManifest, nmci::result::FusionRecord)> {
    let a = load_estimate(&args.a)?;
    let b = load_estimate(&args.b)?;
    if args.omega.is_some() && args.method != FuseMethod::Ci {
        return Err(CliError::Config("--omega applies to --method ci only".into()));
    }
    let result = match args.method {
        FuseMethod::Ci => ci_fuse(&a, &b, args.omega)?,
        FuseMethod::Nmci => {
            let partition = match (partition_arg(args)?, &args.pattern) {
                (Some(p), _) => p,
                (None, Some(path)) => load_pattern(path)?.coarsest_partition()?,
                (None, None) => return Err(CliError::Config("method nmci needs --partition or --pattern".into())),
            };
            nmci_fuse(&a, &b, &partition, BlockMode::Strict)?
        }
        FuseMethod::Sdp => {
            let pattern = match (&args.pattern, partition_arg(args)?) {
                (Some(path), _) => load_pattern(path)?,
                (None, Some(p)) => CrossSparsityPattern::from_partition(&p),
                (None, None) => CrossSparsityPattern::unknown(a.dim()),
            };
            let opts = SolverOptions { tol: args.tol, max_iters: args.max_iters, ..SolverOptions::default() };
            crate::with_jobs(jobs, || robust_fuse_with(&a, &b, &pattern, args.n, args.seed, &opts))??
        }
        FuseMethod::Exact => {
            let path = args.cross.as_ref().ok_or_else(|| CliError::Config("method exact needs --cross".into()))?;
            exact_fuse(&a, &b, &load_matrix(path)?)?
        }
    };
    let record = result.to_record();
    let mut dir = RunDir::create(out, "fuse")?;
    dir.write_json(OUTPUT, &record)?;
    let path = dir.path().to_path_buf();
    let seed = (args.method == FuseMethod::Sdp).then_some(args.seed);
    let manifest = dir.finish("fuse", None, seed, jobs)?;
    if let Some(status) = record.diagnostics.solver_status {
        if status != SolverStatus::Optimal {
            return Err(CliError::Numeric(format!("solver ended with status {status}; output kept in {}", path.display())));
        }
    }
    Ok((path, manifest, record))
}
