//! nmCI against the sampled-SDP bound for growing sample counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DMatrix;
use nmci::estimate::{matrix_to_rows, rows_to_matrix};
use nmci::eval::{conservativeness_sweep_with, SweepReport, SweepRow};
use nmci::sdp::SolverOptions;
use nmci::{BlockPartition, CrossSparsityPattern};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{header, num, read_text, RunDir, RunManifest};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    /// Only same-index cross entries may be nonzero.
    Diagonal,
    /// Every cross entry is free.
    Unknown,
    /// The cross-covariance is zero.
    Zero,
    /// The entries listed in `zero_indices` are zero.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self { tol: d.tol, max_iters: d.max_iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub schema_version: u32,
    pub name: String,
    pub p_a: Vec<Vec<f64>>,
    pub p_b: Vec<Vec<f64>>,
    pub pattern: PatternKind,
    /// `[i, j]` pairs with `P_ab[i, j] = 0`, for `pattern = "explicit"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_indices: Vec<[usize; 2]>,
    pub n_values: Vec<usize>,
    pub mc_runs: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for CompareConfig {
    /// `P_a = diag(3, 1)`, `P_b = diag(1, 4)` with a diagonal cross pattern.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "comparison".into(),
            p_a: vec![vec![3.0, 0.0], vec![0.0, 1.0]],
            p_b: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
            pattern: PatternKind::Diagonal,
            zero_indices: Vec::new(),
            n_values: vec![1, 10, 50, 200, 1000, 2000],
            mc_runs: 100,
            seed: 7,
            solver: SolverConfig::default(),
        }
    }
}

impl CompareConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("comparison config serializes to TOML")
    }

    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p_a = rows_to_matrix(&self.p_a, "p_a").map_err(|e| CliError::Config(e.to_string()))?;
        let p_b = rows_to_matrix(&self.p_b, "p_b").map_err(|e| CliError::Config(e.to_string()))?;
        Ok((p_a, p_b))
    }

    pub fn cross_pattern(&self) -> Result<CrossSparsityPattern> {
        let d = self.p_a.len();
        let pattern = match self.pattern {
            PatternKind::Diagonal => CrossSparsityPattern::from_partition(&BlockPartition::singletons(d)),
            PatternKind::Unknown => CrossSparsityPattern::unknown(d),
            PatternKind::Zero => CrossSparsityPattern::all_zero(d),
            PatternKind::Explicit => CrossSparsityPattern::new(d, d, self.zero_indices.iter().map(|&[i, j]| (i, j)))
                .map_err(|e| CliError::Config(format!("zero_indices: {e}")))?,
        };
        Ok(pattern)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let (p_a, p_b) = self.matrices()?;
        if !p_a.is_square() || p_a.nrows() == 0 || p_a.shape() != p_b.shape() {
            return fail(format!("p_a {:?} and p_b {:?} must be square and of equal size", p_a.shape(), p_b.shape()));
        }
        for (name, p) in [("p_a", &p_a), ("p_b", &p_b)] {
            nmci::matrix::check_spd(p, name).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.pattern != PatternKind::Explicit && !self.zero_indices.is_empty() {
            return fail("zero_indices requires pattern = \"explicit\"".into());
        }
        self.cross_pattern()?;
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return fail("n_values must be a non-empty list of positive counts".into());
        }
        if self.mc_runs == 0 {
            return fail("mc_runs must be positive".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return fail("solver.tol and solver.max_iters must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Comparison config (TOML); the built-in two-state study when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo runs.
    #[arg(long)]
    pub mc: Option<usize>,
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
}

/// Summary written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub name: String,
    pub mc_runs: usize,
    pub seed: u64,
    pub nmci_bound: Vec<Vec<f64>>,
    pub nmci_omega: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

pub fn load_config(args: &CompareArgs) -> Result<CompareConfig> {
    let mut config = match &args.config {
        Some(path) => CompareConfig::from_toml_str(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => CompareConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mc) = args.mc {
        config.mc_runs = mc;
    }
    if let Some(n) = &args.n {
        config.n_values = n.clone();
    }
    config.validate()?;
    Ok(config)
}

pub struct CompareOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: SweepReport,
    pub message: String,
}

pub fn cmd_compare(args: &CompareArgs, out: &Path, jobs: Option<usize>) -> Result<CompareOutcome> {
    let config = load_config(args)?;
    let (p_a, p_b) = config.matrices()?;
    let pattern = config.cross_pattern()?;
    let opts = SolverOptions { tol: config.solver.tol, max_iters: config.solver.max_iters, ..SolverOptions::default() };
    let report = crate::with_jobs(jobs, || {
        conservativeness_sweep_with(&p_a, &p_b, &pattern, &config.n_values, config.mc_runs, config.seed, &opts)
    })?
    .map_err(|e| CliError::Numeric(format!("comparison sweep: {e}")))?;

    let mut dir = RunDir::create(out, "compare")?;
    dir.write_text("compare.toml", &config.to_toml_string())?;
    let mut runs = dir.csv(
        "sweep.csv",
        &header(&["n", "run", "deviation", "nmci_min_eig", "sdp_min_eig", "sdp_objective", "status"]),
    )?;
    for r in &report.runs {
        runs.row([
            r.n.to_string(),
            r.run.to_string(),
            num(r.deviation),
            num(r.nmci_min_eig),
            num(r.sdp_min_eig),
            num(r.sdp_objective),
            r.status.to_string(),
        ])?;
    }
    runs.finish()?;
    let mut rows = dir.csv(
        "summary.csv",
        &header(&[
            "n",
            "deviation_median",
            "deviation_min",
            "deviation_max",
            "nmci_min_eig_median",
            "nmci_min_eig_min",
            "nmci_min_eig_max",
            "sdp_min_eig_median",
            "sdp_min_eig_min",
            "sdp_min_eig_max",
            "sdp_objective_median",
            "nonoptimal",
        ]),
    )?;
    for r in &report.rows {
        let mut fields = vec![r.n.to_string()];
        for s in [r.deviation, r.nmci_min_eig, r.sdp_min_eig] {
            fields.extend([num(s.median), num(s.min), num(s.max)]);
        }
        fields.extend([num(r.sdp_objective_median), r.nonoptimal.to_string()]);
        rows.row(fields)?;
    }
    rows.finish()?;
    dir.write_json(
        "summary.json",
        &CompareSummary {
            name: config.name.clone(),
            mc_runs: config.mc_runs,
            seed: config.seed,
            nmci_bound: matrix_to_rows(&report.nmci_bound),
            nmci_omega: report.nmci_omega.clone(),
            rows: report.rows.clone(),
        },
    )?;
    let path = dir.path().to_path_buf();
    let manifest = dir.finish("compare", args.config.as_deref(), Some(config.seed), jobs)?;

    let mut message = String::new();
    let _ = writeln!(message, "{:>6} {:>14} {:>16} {:>16} {:>10}", "n", "deviation_med", "nmci_min_eig_min", "sdp_min_eig_min", "nonoptimal");
    for r in &report.rows {
        let _ = writeln!(
            message,
            "{:>6} {:>14.3e} {:>16.3e} {:>16.3e} {:>10}",
            r.n, r.deviation.median, r.nmci_min_eig.min, r.sdp_min_eig.min, r.nonoptimal
        );
    }
    let _ = write!(message, "output: {}", path.display());
    Ok(CompareOutcome { dir: path, manifest, report, message })
}
