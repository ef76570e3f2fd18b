//! Monte Carlo multi-agent tracking runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use nmci::eval::{average_series, ChiSquareBand};
use nmci_sim::{simulate, Method, ScenarioConfig, TrackingReport, CENTRAL_ID, PRESETS};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{header, num, read_text, RunDir, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    /// Scenario file (TOML).
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario: desk, full or sdp_pair. Defaults to desk.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo runs.
    #[arg(long)]
    pub mc: Option<usize>,
    /// Methods, comma separated (centralized, none, ci, nmci, sdp).
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<Method>>,
    /// Time steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
}

/// Per-method entry of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub agent: usize,
    pub rmse_mean: f64,
    pub sigma2_mean: f64,
    pub steady_nees: f64,
    pub steady_trace: f64,
    pub fraction_consistent: f64,
    pub network_rmse_mean: f64,
    pub network_fraction_consistent: f64,
    pub max_projection: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackSummary {
    pub name: String,
    pub state_dim: usize,
    pub mc_runs: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub band: Option<ChiSquareBand>,
    pub methods: Vec<MethodReport>,
}

impl TrackSummary {
    pub fn new(config: &ScenarioConfig, report: &TrackingReport) -> Self {
        Self {
            name: config.name.clone(),
            state_dim: report.state_dim,
            mc_runs: config.mc_runs,
            n_steps: config.n_steps,
            seed: config.seed,
            band: report.summaries.first().map(|s| s.stats.chi2_bounds),
            methods: report
                .summaries
                .iter()
                .map(|s| MethodReport {
                    method: s.method.to_string(),
                    agent: s.agent,
                    rmse_mean: s.stats.rmse_mean,
                    sigma2_mean: s.stats.sigma2_mean,
                    steady_nees: s.steady_nees,
                    steady_trace: s.steady_trace,
                    fraction_consistent: s.fraction_consistent(),
                    network_rmse_mean: s.network_rmse_mean,
                    network_fraction_consistent: s.network_fraction_consistent,
                    max_projection: s.max_projection,
                })
                .collect(),
        }
    }
}

pub fn load_scenario(args: &TrackArgs) -> Result<ScenarioConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ScenarioConfig::from_toml_str(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => ScenarioConfig::preset(name)
            .ok_or_else(|| CliError::Config(format!("unknown preset {name:?}; expected one of {}", PRESETS.join(", "))))?,
        (None, None) => ScenarioConfig::desk(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mc) = args.mc {
        config.mc_runs = mc;
    }
    if let Some(methods) = &args.method {
        config.methods = methods.clone();
    }
    if let Some(steps) = args.steps {
        config.n_steps = steps;
    }
    config.validate()?;
    Ok(config)
}

pub struct TrackOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: TrackSummary,
    pub message: String,
}

fn write_outputs(dir: &mut RunDir, config: &ScenarioConfig, report: &TrackingReport, summary: &TrackSummary) -> Result<()> {
    let layout = config.layout();
    let labels = layout.labels();
    dir.write_text("scenario.toml", &config.to_toml_string())?;

    let mut metrics = dir.csv(
        "metrics.csv",
        &header(&["run", "method", "step", "agent", "nees", "sq_pos_err", "two_sigma", "trace"]),
    )?;
    for run in &report.runs {
        for trace in &run.methods {
            for m in &trace.metrics {
                metrics.row([
                    run.run.to_string(),
                    trace.method.to_string(),
                    m.step.to_string(),
                    m.agent.to_string(),
                    num(m.nees),
                    num(m.sq_pos_err),
                    num(m.two_sigma),
                    num(m.trace),
                ])?;
            }
        }
    }
    metrics.finish()?;

    let mut nees = dir.csv("nees.csv", &header(&["method", "agent", "step", "nees", "lower", "upper", "inside"]))?;
    for (k, s) in report.summaries.iter().enumerate() {
        let band = s.stats.chi2_bounds;
        let agents: Vec<usize> =
            if s.method == Method::Centralized { vec![CENTRAL_ID] } else { (1..=config.n_agents).collect() };
        for agent in agents {
            let per_run: Vec<Vec<f64>> = report
                .runs
                .iter()
                .map(|r| r.methods[k].agent_metrics(agent).iter().map(|m| m.nees).collect())
                .collect();
            for (i, v) in average_series(&per_run).into_iter().enumerate() {
                nees.row([
                    s.method.to_string(),
                    agent.to_string(),
                    (i + 1).to_string(),
                    num(v),
                    num(band.lower),
                    num(band.upper),
                    band.contains(v).to_string(),
                ])?;
            }
        }
    }
    nees.finish()?;

    let mut omega = dir.csv("omega.csv", &header(&["run", "method", "step", "agent_a", "agent_b", "block", "omega"]))?;
    for run in &report.runs {
        for trace in &run.methods {
            for o in &trace.omega {
                for (block, w) in o.weights.iter().enumerate() {
                    omega.row([
                        o.run.to_string(),
                        trace.method.to_string(),
                        o.step.to_string(),
                        o.agent_a.to_string(),
                        o.agent_b.to_string(),
                        (block + 1).to_string(),
                        num(*w),
                    ])?;
                }
            }
        }
    }
    omega.finish()?;

    let mut truth_header = header(&["run", "step"]);
    truth_header.extend(labels.iter().cloned());
    let mut truth = dir.csv("truth.csv", &truth_header)?;
    for run in &report.runs {
        for step in 0..=config.n_steps {
            let mut fields = vec![run.run.to_string(), step.to_string()];
            fields.extend(run.record.truth(&layout, step).iter().map(|v| num(*v)));
            truth.row(fields)?;
        }
    }
    truth.finish()?;

    let mut est_header = header(&["run", "method", "step", "agent"]);
    est_header.extend(labels.iter().cloned());
    est_header.extend(labels.iter().map(|l| format!("{l}.var")));
    let mut estimates = dir.csv("estimates.csv", &est_header)?;
    for run in &report.runs {
        for trace in &run.methods {
            for snap in &trace.snapshots {
                let mut fields =
                    vec![run.run.to_string(), trace.method.to_string(), snap.step.to_string(), snap.agent.to_string()];
                fields.extend(snap.mean.iter().chain(&snap.variance).map(|v| num(*v)));
                estimates.row(fields)?;
            }
        }
    }
    estimates.finish()?;

    let mut table = dir.csv(
        "summary.csv",
        &header(&[
            "method",
            "agent",
            "rmse_mean",
            "sigma2_mean",
            "steady_nees",
            "steady_trace",
            "fraction_consistent",
            "network_rmse_mean",
            "network_fraction_consistent",
            "max_projection",
        ]),
    )?;
    for m in &summary.methods {
        table.row([
            m.method.clone(),
            m.agent.to_string(),
            num(m.rmse_mean),
            num(m.sigma2_mean),
            num(m.steady_nees),
            num(m.steady_trace),
            num(m.fraction_consistent),
            num(m.network_rmse_mean),
            num(m.network_fraction_consistent),
            num(m.max_projection),
        ])?;
    }
    table.finish()?;
    dir.write_json("summary.json", summary)
}

pub fn cmd_track(args: &TrackArgs, out: &Path, jobs: Option<usize>) -> Result<TrackOutcome> {
    let config = load_scenario(args)?;
    let report = crate::with_jobs(jobs, || simulate(&config, true))??;
    let summary = TrackSummary::new(&config, &report);

    let mut dir = RunDir::create(out, "track")?;
    write_outputs(&mut dir, &config, &report, &summary)?;
    let path = dir.path().to_path_buf();
    let manifest = dir.finish("track", args.config.as_deref(), Some(config.seed), jobs)?;

    let mut message = format!(
        "scenario {}: state dimension {}, {} runs x {} steps\n",
        config.name, report.state_dim, config.mc_runs, config.n_steps
    );
    if let Some(band) = summary.band {
        let _ = writeln!(message, "NEES band [{:.2}, {:.2}] at level {}", band.lower, band.upper, band.level);
    }
    for m in &summary.methods {
        let _ = writeln!(
            message,
            "{:<12} agent {:>2}  rmse {:.4}  2sigma {:.4}  steady NEES {:.2}  in band {:.2}",
            m.method, m.agent, m.rmse_mean, m.sigma2_mean, m.steady_nees, m.fraction_consistent
        );
    }
    let _ = write!(message, "output: {}", path.display());
    Ok(TrackOutcome { dir: path, manifest, summary, message })
}
