//! `noisy-cluster`: density deconvolution, noisy k-means and ERC bandwidth
//! selection from JSON run configs.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use noisy_cluster::applications::{
    calibrate_quantile_scale, pinball_risk, quantile_domain, select_quantile, QuantileProblem,
};
use noisy_cluster::density::{estimate_density, DensityField, Sample};
use noisy_cluster::erc::{select_bandwidth, write_trace_csv, LambdaFit};
use noisy_cluster::rng::derive_seed;
use noisy_cluster::sim::{
    calibrate_scale, cell_seed, generate, run_rate_experiment_on, Scenario, CALIBRATION_EXPONENTS,
};
use noisy_cluster::{Error, Result};
use serde_json::json;

use config::RunConfig;
use output::OutDir;

#[derive(Parser, Debug)]
#[command(name = "noisy-cluster", version, about = "Clustering from noisy observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config (or a manifest from an earlier run).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Deconvolution density estimate on the quadrature grid.
    EstimateDensity,
    /// Noisy k-means at a fixed bandwidth.
    Cluster,
    /// ERC bandwidth selection over the net.
    Select,
    /// Monte Carlo rate experiment.
    Rates,
    /// Quantiles selected by the generic ERC rule (d = 1).
    Quantile,
    /// Threshold-scale calibration on a pilot.
    Calibrate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::EstimateDensity => "estimate-density",
            Command::Cluster => "cluster",
            Command::Select => "select",
            Command::Rates => "rates",
            Command::Quantile => "quantile",
            Command::Calibrate => "calibrate",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = config::load(path)?;
    if let Some(s) = cli.seed {
        cfg.scenario.seed = s;
    }
    if matches!(cli.command, Command::Rates) {
        cfg.scenario.validate_for_rates()?;
    }
    let sc = Scenario::build(cfg.scenario.clone())?;
    let mut out = OutDir::create(&cli.out)?;
    let mut resolved = json!({
        "a": sc.config.a,
        "kappa": sc.kappa,
        "grid_points_per_axis": sc.grid.points_per_axis(),
        "grid_nodes": sc.grid.len(),
        "table": {
            "fourier_samples": sc.table_config.fourier_samples,
            "oversample": sc.table_config.oversample,
            "range": sc.table_config.range,
        },
        "kernel_l1_norm": sc.kernel.l1_norm,
        "minimizer": sc.config.minimizer,
        "threads": rayon::current_num_threads(),
    });
    let extra = match cli.command {
        Command::EstimateDensity => estimate(&cfg, &sc, &mut out)?,
        Command::Cluster => cluster(&cfg, &sc, &mut out)?,
        Command::Select => select(&cfg, &sc, &mut out)?,
        Command::Rates => rates(&sc, &mut out)?,
        Command::Quantile => quantile(&cfg, &sc, &mut out)?,
        Command::Calibrate => calibrate(&sc, &mut out)?,
    };
    if let (Some(r), serde_json::Value::Object(e)) = (resolved.as_object_mut(), extra) {
        r.extend(e);
    }
    out.finish(cli.command.name(), &cfg, resolved)?;
    Ok(())
}

fn read_sample(path: &Path, dim: usize) -> Result<Sample> {
    let mut r = csv::Reader::from_path(path)?;
    let mut flat = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(Error::Config(format!(
                "{}: expected {dim} columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        for v in rec.iter() {
            flat.push(v.trim().parse::<f64>().map_err(|e| {
                Error::Config(format!("{}: bad value {v:?}: {e}", path.display()))
            })?);
        }
    }
    Sample::from_flat(dim, flat)
}

/// Observations and whether they were simulated from the scenario truth.
fn load_sample(cfg: &RunConfig, sc: &Scenario) -> Result<(Sample, bool)> {
    match &cfg.sample_csv {
        Some(p) => Ok((read_sample(p, sc.model.dim())?, false)),
        None => {
            let n = cfg.sample_size();
            let g = generate(&sc.config.model, &sc.noise, n, cell_seed(sc.config.seed, n, 0))?;
            Ok((g.sample, true))
        }
    }
}

fn fixed_lambda(cfg: &RunConfig, sc: &Scenario, n: usize) -> f64 {
    cfg.lambda.unwrap_or_else(|| sc.theory_lambda(n))
}

fn estimate(cfg: &RunConfig, sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    let (sample, _) = load_sample(cfg, sc)?;
    let lambda = fixed_lambda(cfg, sc, sample.n());
    let table = sc.table(lambda)?;
    let field = estimate_density(&sample, &table, &sc.grid)?;
    out.write_with("density.csv", |p| field.write_csv(p))?;
    Ok(json!({ "lambda": lambda, "n": sample.n(), "mass": field.mass() }))
}

fn cluster(cfg: &RunConfig, sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    let (sample, simulated) = load_sample(cfg, sc)?;
    let lambda = fixed_lambda(cfg, sc, sample.n());
    let f = sc.fit(&sample, lambda, derive_seed(sc.config.seed, &[1]))?;
    let excess = if simulated { Some(sc.excess(&f.fit.codebook)?) } else { None };
    out.write_json(
        "codebook.json",
        &json!({
            "lambda": lambda,
            "centers": f.fit.codebook.to_rows(),
            "empirical_risk": f.fit.risk,
            "iterations": f.fit.iterations,
            "converged": f.fit.converged,
            "excess_risk": excess,
        }),
    )?;
    Ok(json!({ "lambda": lambda, "n": sample.n() }))
}

fn threshold_scale(sc: &Scenario) -> Result<(f64, Option<serde_json::Value>)> {
    match sc.config.threshold_scale {
        Some(s) => Ok((s, None)),
        None => {
            let mut ns = sc.config.n_list.clone();
            ns.sort_unstable();
            let cal = calibrate_scale(sc, ns[ns.len() / 2], sc.config.pilot_replications, 2.0)?;
            Ok((cal.scale, Some(serde_json::to_value(&cal)?)))
        }
    }
}

fn select(cfg: &RunConfig, sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    let (sample, simulated) = load_sample(cfg, sc)?;
    let n = sample.n();
    let net = sc.net(n)?;
    let fits: Vec<LambdaFit> = net
        .net
        .iter()
        .enumerate()
        .map(|(i, &l)| sc.fit(&sample, l, derive_seed(sc.config.seed, &[1, i as u64])))
        .collect::<Result<_>>()?;
    let (scale, calibration) = threshold_scale(sc)?;
    let sel = select_bandwidth(&fits, &net, &sc.threshold_config(scale))?;
    let excess = if simulated { Some(sc.excess(&sel.codebook)?) } else { None };
    out.write_json(
        "lambda_hat.json",
        &json!({
            "lambda_hat": sel.lambda_hat,
            "index": sel.index,
            "net": net.net,
            "centers": sel.codebook.to_rows(),
            "feasible": sel.feasible,
            "monotone": sel.monotone,
            "excess_risk": excess,
        }),
    )?;
    out.write_with("trace.csv", |p| write_trace_csv(&sel.trace, p))?;
    Ok(json!({
        "n": n,
        "threshold_scale": scale,
        "calibration": calibration,
        "lambda_min": net.lambda_min,
        "lambda_max": net.lambda_max,
    }))
}

fn rates(sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    let report = run_rate_experiment_on(sc)?;
    out.write_with("rates.csv", |p| report.write_csv(p))?;
    out.write_json("summary.json", &report.summary_json())?;
    if report.completeness < 1.0 {
        log::warn!("{} cells failed", report.failures.len());
    }
    Ok(json!({
        "threshold_scale": report.threshold_scale,
        "completeness": report.completeness,
        "failures": report.failures,
    }))
}

fn calibrate(sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    let mut ns = sc.config.n_list.clone();
    ns.sort_unstable();
    let cal = calibrate_scale(sc, ns[ns.len() / 2], sc.config.pilot_replications, 2.0)?;
    out.write_json("calibration.json", &cal)?;
    Ok(json!({ "threshold_scale": cal.scale, "reached": cal.reached }))
}

fn quantile(cfg: &RunConfig, sc: &Scenario, out: &mut OutDir) -> Result<serde_json::Value> {
    if sc.model.dim() != 1 {
        return Err(Error::Config("quantile needs a one-dimensional scenario".into()));
    }
    let (sample, simulated) = load_sample(cfg, sc)?;
    let n = sample.n();
    let net = sc.net(n)?;
    let domain = quantile_domain();
    let truth = DensityField::from_fn(Arc::clone(&domain), 0.0, |x| sc.model.pdf(x));
    let q = &cfg.quantile;
    let base = QuantileProblem::new(
        q.taus[0],
        &sample,
        &sc.kernel,
        &sc.noise,
        net.clone(),
        Arc::clone(&domain),
        q.scale_q.unwrap_or(1.0),
    )?;
    let pilots: Vec<QuantileProblem> = if q.scale_q.is_none() {
        (0..sc.config.pilot_replications)
            .map(|r| {
                let seed = derive_seed(sc.config.seed, &[0x71, r as u64]);
                let g = generate(&sc.config.model, &sc.noise, n, seed)?;
                QuantileProblem::new(
                    q.taus[0],
                    &g.sample,
                    &sc.kernel,
                    &sc.noise,
                    net.clone(),
                    Arc::clone(&domain),
                    1.0,
                )
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let scales: Vec<f64> = CALIBRATION_EXPONENTS.map(|e| 2f64.powi(e)).collect();
    let mut rows = Vec::new();
    let mut used = Vec::new();
    for &tau in &q.taus {
        let true_fit = noisy_cluster::applications::minimize_pinball(&truth, tau);
        let excess = |eta: f64| pinball_risk(&truth, tau, eta) - true_fit.risk;
        let scale_q = match q.scale_q {
            Some(s) => s,
            None => {
                let p: Vec<QuantileProblem> =
                    pilots.iter().map(|p| p.with_tau(tau)).collect::<Result<_>>()?;
                calibrate_quantile_scale(&p, &scales, q.t, q.placement, 2.0, excess)?.scale_q
            }
        };
        let problem = base.with_tau(tau)?.with_scale(scale_q);
        let sel = select_quantile(&problem, q.t, q.placement)?;
        used.push(json!({ "tau": tau, "scale_q": scale_q }));
        rows.push(json!({
            "tau": tau,
            "q_hat": sel.g_hat,
            "lambda_hat": sel.lambda_hat,
            "index": sel.index,
            "monotone": sel.monotone,
            "q_true": if simulated { Some(true_fit.eta) } else { None },
        }));
    }
    out.write_json("quantile.json", &rows)?;
    Ok(json!({ "n": n, "quantile_scales": used, "placement": q.placement, "t": q.t }))
}
