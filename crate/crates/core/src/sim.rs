//! Synthetic scenarios, Monte Carlo rate experiments and threshold calibration.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, DensityField, GridDomain, Sample};
use crate::erc::{select_bandwidth, BandwidthGrid, LambdaFit, ThresholdConfig};
use crate::error::{Error, Result};
use crate::kernels::{
    build_deconv_kernel, DeconvKernelTable, KernelKind, KernelSpec, NoiseKind, NoiseModel,
    TableCache, TableConfig,
};
use crate::minimizer::{minimize, MinimizeConfig};
use crate::risk::{excess_risk, probe_margin, Codebook, Component, TrueDensity, TrueModel};
use crate::rng::{derive_seed, rng_from};

/// Scales searched by the calibration, `2^-20 … 2^0`.
pub const CALIBRATION_EXPONENTS: std::ops::RangeInclusive<i32> = -20..=0;

/// Noise law of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// No noise; `beta` only drives the bandwidth net and threshold.
    Dirac { beta: Vec<f64> },
    /// Independent Laplace coordinates.
    Laplace { scales: Vec<f64> },
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseModel> {
        match self {
            NoiseConfig::Dirac { beta } => NoiseModel::dirac(beta.clone()),
            NoiseConfig::Laplace { scales } => NoiseModel::product_laplace(scales.clone()),
        }
    }
}

/// Base kernel of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// `sinc` or `sinc_power`.
    pub name: String,
    #[serde(default)]
    pub order: u32,
    /// Fourier support `S`, the same on every axis.
    #[serde(default = "one")]
    pub support: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            name: "sinc".into(),
            order: 0,
            support: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn build(&self, dim: usize) -> Result<KernelSpec> {
        KernelSpec::new(KernelKind::from_name(&self.name, self.order)?, vec![self.support; dim])
    }
}

/// Everything needed to simulate and evaluate one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: TrueDensity,
    pub k: usize,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub n_list: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Net ratio `a`.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Upper regularity bound `s⁺` of the net.
    pub s_plus: f64,
    /// Declared smoothness `s` of the truth.
    pub smoothness: f64,
    #[serde(default = "one")]
    pub holder_l: f64,
    /// Threshold multiplier; calibrated when absent.
    #[serde(default)]
    pub threshold_scale: Option<f64>,
    /// Margin constant; probed when absent.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Midpoints per axis of the quadrature grid.
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub fourier_samples: Option<usize>,
    /// Half-range of the kernel tables; derived from the noise when absent.
    #[serde(default)]
    pub table_range: Option<f64>,
    #[serde(default)]
    pub minimizer: MinimizeConfig,
    /// Replications of the calibration pilot.
    #[serde(default = "default_pilot")]
    pub pilot_replications: usize,
}

fn default_a() -> f64 {
    0.8
}

fn default_pilot() -> usize {
    20
}

impl ScenarioConfig {
    /// Two well-separated truncated Gaussian clusters at ±0.5 (scale 0.15) observed
    /// through Laplace noise.
    pub fn two_cluster_laplace(noise_scale: f64) -> Self {
        ScenarioConfig {
            model: TrueDensity::Mixture {
                components: vec![
                    Component { mean: vec![-0.5], scale: 0.15, weight: 0.5 },
                    Component { mean: vec![0.5], scale: 0.15, weight: 0.5 },
                ],
            },
            k: 2,
            noise: NoiseConfig::Laplace { scales: vec![noise_scale] },
            kernel: KernelConfig::default(),
            n_list: vec![1024, 2048, 4096, 8192, 16384],
            replications: 50,
            seed: 0,
            a: 0.8,
            s_plus: 3.0,
            smoothness: 2.0,
            holder_l: 1.0,
            threshold_scale: None,
            kappa: None,
            grid_points: None,
            fourier_samples: None,
            table_range: None,
            minimizer: MinimizeConfig::default(),
            pilot_replications: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = self.model.dim();
        if let TrueDensity::Mixture { components } = &self.model {
            for c in components {
                let r = c.mean.iter().map(|m| m * m).sum::<f64>().sqrt();
                if r > 1.0 - 3.0 * c.scale {
                    return Err(Error::config(format!(
                        "component mean at radius {r} is not inside B(0, 1 − 3σ)"
                    )));
                }
            }
        }
        let nd = match &self.noise {
            NoiseConfig::Dirac { beta } => beta.len(),
            NoiseConfig::Laplace { scales } => scales.len(),
        };
        if nd != d {
            return Err(Error::config("noise dimension differs from the model"));
        }
        if self.k == 0 || self.replications == 0 || self.n_list.is_empty() {
            return Err(Error::config("k, replications and n_list must be non-empty"));
        }
        if self.n_list.iter().any(|&n| n < 3) {
            return Err(Error::config("every sample size must be at least 3"));
        }
        if !(self.a > 0.0 && self.a < 1.0) || !(self.s_plus > 0.0) || !(self.smoothness > 0.0) {
            return Err(Error::config("need a ∈ (0,1), s⁺ > 0 and s > 0"));
        }
        if let Some(s) = self.threshold_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("threshold_scale must be finite and ≥ 0"));
            }
        }
        self.minimizer.validate()
    }

    /// `n_list` must hold at least three sizes spanning a decade.
    pub fn validate_for_rates(&self) -> Result<()> {
        self.validate()?;
        if self.n_list.len() < 3 {
            return Err(Error::config("need ≥ 3 sizes in n_list"));
        }
        let lo = *self.n_list.iter().min().unwrap() as f64;
        let hi = *self.n_list.iter().max().unwrap() as f64;
        if hi / lo < 10.0 {
            return Err(Error::config("n_list must span at least one decade"));
        }
        Ok(())
    }
}

/// A scenario with its models built and constants resolved.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: TrueModel,
    pub kernel: KernelSpec,
    pub noise: NoiseModel,
    pub grid: Arc<GridDomain>,
    pub kappa: f64,
    pub table_config: TableConfig,
    tables: Mutex<HashMap<u64, Arc<DeconvKernelTable>>>,
    cache: Option<TableCache>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model.dim();
        let grid = Arc::new(match config.grid_points {
            Some(p) => GridDomain::ball(d, 1.0, p)?,
            None => GridDomain::default_for(d)?,
        });
        let model = TrueModel::new(
            config.model.clone(),
            config.k,
            Arc::clone(&grid),
            config.smoothness,
            config.holder_l,
        )?;
        let kernel = config.kernel.build(d)?;
        let noise = config.noise.build()?;
        let kappa = match config.kappa {
            Some(k) => k,
            None => probe_margin(&model, &grid, 400, derive_seed(config.seed, &[0x6b]))?.kappa,
        };
        let spread = match &noise.kind {
            NoiseKind::Dirac => 0.0,
            // P(|ε_v| > t) = exp(−t/σ): 1e-12 tail per observation
            NoiseKind::Laplace { scales } => {
                scales.iter().fold(0.0f64, |m, s| m.max(*s)) * 12.0 * 10f64.ln()
            }
        };
        let table_config = TableConfig {
            fourier_samples: config.fourier_samples.unwrap_or(4096),
            range: config.table_range.unwrap_or(2.0 + spread),
            align_to: Some(grid.step()),
            ..TableConfig::default()
        };
        Ok(Scenario {
            config,
            model,
            kernel,
            noise,
            grid,
            kappa,
            table_config,
            tables: Mutex::new(HashMap::new()),
            cache: TableCache::from_env(),
        })
    }

    /// Deconvolution table at `lambda`, built once per scenario.
    pub fn table(&self, lambda: f64) -> Result<Arc<DeconvKernelTable>> {
        if let Some(t) = self.tables.lock().unwrap().get(&lambda.to_bits()) {
            return Ok(Arc::clone(t));
        }
        let built = match &self.cache {
            Some(c) => c.get_or_build(&self.kernel, &self.noise, lambda, &self.table_config)?,
            None => build_deconv_kernel(&self.kernel, &self.noise, lambda, &self.table_config)?,
        };
        let t = Arc::new(built);
        self.tables
            .lock()
            .unwrap()
            .insert(lambda.to_bits(), Arc::clone(&t));
        Ok(t)
    }

    pub fn threshold_config(&self, scale: f64) -> ThresholdConfig {
        ThresholdConfig::from_models(&self.kernel, &self.noise, self.kappa, scale)
    }

    pub fn net(&self, n: usize) -> Result<BandwidthGrid> {
        BandwidthGrid::new(n, self.noise.beta_bar(), self.config.s_plus, self.config.a)
    }

    /// `λ̄ = n^{-1/(2s + 2β̄)}`.
    pub fn theory_lambda(&self, n: usize) -> f64 {
        (n as f64).powf(-1.0 / (2.0 * self.config.smoothness + 2.0 * self.noise.beta_bar()))
    }

    /// `−s / (s + β̄)`.
    pub fn exponent_theory(&self) -> f64 {
        -self.config.smoothness / (self.config.smoothness + self.noise.beta_bar())
    }

    /// Density estimate and minimizer at one bandwidth.
    pub fn fit(&self, sample: &Sample, lambda: f64, seed: u64) -> Result<LambdaFit> {
        let table = self.table(lambda)?;
        let field = estimate_density(sample, &table, &self.grid)?;
        let cfg = MinimizeConfig {
            seed,
            ..self.config.minimizer.clone()
        };
        let fit = minimize(&field, self.config.k, &cfg)?;
        Ok(LambdaFit { field, fit })
    }

    pub fn excess(&self, c: &Codebook) -> Result<f64> {
        excess_risk(c, &self.model, &self.grid)
    }
}

/// A generated data set.
#[derive(Clone, Debug)]
pub struct Generated {
    pub sample: Sample,
    /// Uncorrupted points, row-major.
    pub latent: Vec<f64>,
}

/// Draws `X` from the truth, then `ε` from the noise law, and returns `Z = X + ε`.
pub fn generate(density: &TrueDensity, noise: &NoiseModel, n: usize, seed: u64) -> Result<Generated> {
    if n == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    let mut rng = rng_from(seed);
    let latent = density.sample(&mut rng, n)?;
    let mut z = latent.clone();
    if let NoiseKind::Laplace { scales } = &noise.kind {
        let d = scales.len();
        for (i, zi) in z.iter_mut().enumerate() {
            let e: f64 = Exp1.sample(&mut rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *zi += sign * scales[i % d] * e;
        }
    }
    Ok(Generated {
        sample: Sample::from_flat(density.dim(), z)?,
        latent,
    })
}

/// Sample seed of one `(n, replication)` cell.
pub fn cell_seed(base: u64, n: usize, replication: usize) -> u64 {
    derive_seed(base, &[n as u64, replication as u64])
}

/// Fits at every net bandwidth plus the theory bandwidth for one data set.
pub struct CellFits {
    pub net: BandwidthGrid,
    pub fits: Vec<LambdaFit>,
    pub excess_net: Vec<f64>,
    pub lambda_theory: f64,
    pub excess_theory: f64,
}

fn fit_cell(sc: &Scenario, n: usize, seed: u64) -> Result<CellFits> {
    let data = generate(&sc.config.model, &sc.noise, n, seed)?;
    let net = sc.net(n)?;
    let mut fits = Vec::with_capacity(net.len());
    let mut excess_net = Vec::with_capacity(net.len());
    for (i, &lambda) in net.net.iter().enumerate() {
        let f = sc.fit(&data.sample, lambda, derive_seed(seed, &[1, i as u64]))?;
        excess_net.push(sc.excess(&f.fit.codebook)?);
        fits.push(f);
    }
    let lambda_theory = sc.theory_lambda(n);
    let ft = sc.fit(&data.sample, lambda_theory, derive_seed(seed, &[2]))?;
    let excess_theory = sc.excess(&ft.fit.codebook)?;
    Ok(CellFits {
        net,
        fits,
        excess_net,
        lambda_theory,
        excess_theory,
    })
}

/// One `(n, replication)` row of a rate experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub lambda_hat: f64,
    pub lambda_oracle_best: f64,
    pub lambda_theory: f64,
    pub excess_risk_hat: f64,
    pub excess_risk_best: f64,
    pub excess_risk_theory_lambda: f64,
    pub net_size: usize,
}

/// 95% bootstrap interval of a fitted slope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub n_list: Vec<usize>,
    pub slope_theory: f64,
    pub slope_erc: f64,
    pub slope_best: f64,
    pub exponent_theory: f64,
    pub ci_theory: Interval,
    pub ci_erc: Interval,
    pub threshold_scale: f64,
    pub kappa: f64,
    /// Fraction of cells that completed.
    pub completeness: f64,
    pub failures: Vec<String>,
}

/// Per-n means of the excess risks in a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateMeans {
    pub n: usize,
    pub hat: f64,
    pub best: f64,
    pub theory: f64,
}

impl RateReport {
    pub fn means(&self) -> Vec<RateMeans> {
        self.n_list
            .iter()
            .map(|&n| {
                let rows: Vec<&RateRow> = self.rows.iter().filter(|r| r.n == n).collect();
                let m = rows.len().max(1) as f64;
                RateMeans {
                    n,
                    hat: rows.iter().map(|r| r.excess_risk_hat).sum::<f64>() / m,
                    best: rows.iter().map(|r| r.excess_risk_best).sum::<f64>() / m,
                    theory: rows.iter().map(|r| r.excess_risk_theory_lambda).sum::<f64>() / m,
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slope_theory": self.slope_theory,
            "slope_erc": self.slope_erc,
            "slope_best": self.slope_best,
            "exponent_theory": self.exponent_theory,
            "ci": { "theory": self.ci_theory, "erc": self.ci_erc },
            "threshold_scale": self.threshold_scale,
            "kappa": self.kappa,
            "completeness": self.completeness,
        })
    }
}

/// Ordinary least squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of log mean excess against log n.
pub fn log_log_slope(ns: &[usize], means: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect();
    ols_slope(&x, &y)
}

fn bootstrap_ci(
    ns: &[usize],
    per_n: &[Vec<f64>],
    resamples: usize,
    seed: u64,
) -> Interval {
    let mut rng = rng_from(seed);
    let mut slopes: Vec<f64> = (0..resamples)
        .map(|_| {
            let means: Vec<f64> = per_n
                .iter()
                .map(|v| {
                    let m = v.len();
                    (0..m).map(|_| v[rng.random_range(0..m)]).sum::<f64>() / m as f64
                })
                .collect();
            log_log_slope(ns, &means)
        })
        .filter(|s| s.is_finite())
        .collect();
    if slopes.is_empty() {
        return Interval { lo: f64::NAN, hi: f64::NAN };
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| slopes[((slopes.len() - 1) as f64 * p).round() as usize];
    Interval { lo: q(0.025), hi: q(0.975) }
}

/// Outcome of the threshold calibration.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub scale: f64,
    /// `(scale, mean ERC excess / mean best-in-net excess)` for every candidate.
    pub ratios: Vec<(f64, f64)>,
    /// False when no candidate reached the target ratio; the best ratio is used.
    pub reached: bool,
    pub pilot_n: usize,
}

/// Smallest scale in `2^-20 … 2^0` whose mean ERC excess on a pilot is within
/// `target` times the mean best-in-net excess.
pub fn calibrate_scale(sc: &Scenario, pilot_n: usize, reps: usize, target: f64) -> Result<Calibration> {
    let base = derive_seed(sc.config.seed, &[0x70696c6f74]);
    let cells: Vec<CellFits> = (0..reps)
        .into_par_iter()
        .map(|r| fit_cell(sc, pilot_n, cell_seed(base, pilot_n, r)))
        .collect::<Result<_>>()?;
    let best: f64 = cells
        .iter()
        .map(|c| c.excess_net.iter().cloned().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / reps as f64;
    let mut ratios = Vec::new();
    for e in CALIBRATION_EXPONENTS {
        let scale = 2f64.powi(e);
        let cfg = sc.threshold_config(scale);
        let mut hat = 0.0;
        for c in &cells {
            let s = select_bandwidth(&c.fits, &c.net, &cfg)?;
            hat += c.excess_net[s.index];
        }
        hat /= reps as f64;
        ratios.push((scale, hat / best.max(f64::MIN_POSITIVE)));
    }
    let chosen = ratios.iter().find(|(_, r)| *r <= target).copied();
    let (scale, reached) = match chosen {
        Some((s, _)) => (s, true),
        None => {
            let (s, _) = ratios
                .iter()
                .copied()
                .fold((1.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            log::warn!("calibration did not reach ratio {target}; using scale {s}");
            (s, false)
        }
    };
    Ok(Calibration {
        scale,
        ratios,
        reached,
        pilot_n,
    })
}

/// Runs the full `(n, replication)` grid.
pub fn run_rate_experiment(config: &ScenarioConfig) -> Result<RateReport> {
    config.validate_for_rates()?;
    let sc = Scenario::build(config.clone())?;
    run_rate_experiment_on(&sc)
}

/// [`run_rate_experiment`] on an already built scenario.
pub fn run_rate_experiment_on(sc: &Scenario) -> Result<RateReport> {
    let config = &sc.config;
    let scale = match config.threshold_scale {
        Some(s) => s,
        None => {
            let mut ns = config.n_list.clone();
            ns.sort_unstable();
            calibrate_scale(sc, ns[ns.len() / 2], config.pilot_replications, 2.0)?.scale
        }
    };
    let tcfg = sc.threshold_config(scale);
    let jobs: Vec<(usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let results: Vec<std::result::Result<RateRow, String>> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let seed = cell_seed(config.seed, n, r);
            let run = || -> Result<RateRow> {
                let c = fit_cell(sc, n, seed)?;
                let s = select_bandwidth(&c.fits, &c.net, &tcfg)?;
                let (bi, best) = c
                    .excess_net
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                Ok(RateRow {
                    n,
                    replication: r,
                    seed,
                    lambda_hat: s.lambda_hat,
                    lambda_oracle_best: c.net.net[bi],
                    lambda_theory: c.lambda_theory,
                    excess_risk_hat: c.excess_net[s.index],
                    excess_risk_best: best,
                    excess_risk_theory_lambda: c.excess_theory,
                    net_size: c.net.len(),
                })
            };
            run().map_err(|e| format!("n={n} rep={r}: {e}"))
        })
        .collect();
    let total = results.len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("cell failed: {e}");
                failures.push(e);
            }
        }
    }
    let ns: Vec<usize> = config
        .n_list
        .iter()
        .copied()
        .filter(|&n| rows.iter().any(|r| r.n == n))
        .collect();
    let per = |f: fn(&RateRow) -> f64| -> Vec<Vec<f64>> {
        ns.iter()
            .map(|&n| rows.iter().filter(|r| r.n == n).map(f).collect())
            .collect()
    };
    let theory = per(|r| r.excess_risk_theory_lambda);
    let erc = per(|r| r.excess_risk_hat);
    let best = per(|r| r.excess_risk_best);
    let mean = |v: &Vec<Vec<f64>>| -> Vec<f64> {
        v.iter().map(|x| x.iter().sum::<f64>() / x.len() as f64).collect()
    };
    let seed = derive_seed(config.seed, &[0x626f6f74]);
    Ok(RateReport {
        slope_theory: log_log_slope(&ns, &mean(&theory)),
        slope_erc: log_log_slope(&ns, &mean(&erc)),
        slope_best: log_log_slope(&ns, &mean(&best)),
        exponent_theory: sc.exponent_theory(),
        ci_theory: bootstrap_ci(&ns, &theory, 200, seed),
        ci_erc: bootstrap_ci(&ns, &erc, 200, derive_seed(seed, &[1])),
        threshold_scale: scale,
        kappa: sc.kappa,
        completeness: rows.len() as f64 / total as f64,
        failures,
        rows,
        n_list: ns,
    })
}

/// `(λ^{-d} K(·/λ) ∗ f)(x)`, the mean of the deconvolution estimate, by
/// quadrature against the truth on a fine grid.
pub fn smoothed_truth(model: &TrueModel, kernel: &KernelSpec, lambda: f64, x: &[f64]) -> f64 {
    let d = model.dim();
    let fine = GridDomain::ball(d, 1.0, if d == 1 { 4000 } else { 300 }).expect("valid grid");
    let h = fine.cell_volume();
    let mut u = vec![0.0; d];
    (0..fine.len())
        .map(|g| {
            let p = fine.node(g);
            for v in 0..d {
                u[v] = (p[v] - x[v]) / lambda;
            }
            kernel.value(&u) * model.pdf(p)
        })
        .sum::<f64>()
        * h
        / lambda.powi(d as i32)
}

/// Density estimate and fitted codebook on a fixed bandwidth for a data set.
pub fn fit_at(sc: &Scenario, sample: &Sample, lambda: f64, seed: u64) -> Result<(DensityField, Codebook, f64)> {
    let f = sc.fit(sample, lambda, seed)?;
    Ok((f.field, f.fit.codebook, f.fit.risk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_noise_leaves_latent_points_unchanged() {
        let cfg = ScenarioConfig::two_cluster_laplace(0.1);
        let noise = NoiseModel::dirac(vec![0.6]).unwrap();
        let g = generate(&cfg.model, &noise, 500, 4).unwrap();
        assert_eq!(g.sample.flat(), &g.latent[..]);
    }

    #[test]
    fn laplace_increments_have_variance_two_sigma_squared() {
        let cfg = ScenarioConfig::two_cluster_laplace(0.3);
        let noise = cfg.noise.build().unwrap();
        let g = generate(&cfg.model, &noise, 100_000, 9).unwrap();
        let e: Vec<f64> = g.sample.flat().iter().zip(&g.latent).map(|(z, x)| z - x).collect();
        let m = e.iter().sum::<f64>() / e.len() as f64;
        let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
        assert!((v / (2.0 * 0.09) - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = ScenarioConfig::two_cluster_laplace(0.2);
        let noise = cfg.noise.build().unwrap();
        let a = generate(&cfg.model, &noise, 300, 77).unwrap();
        let b = generate(&cfg.model, &noise, 300, 77).unwrap();
        assert_eq!(a.sample, b.sample);
        let c = generate(&cfg.model, &noise, 300, 78).unwrap();
        assert_ne!(a.sample, c.sample);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScenarioConfig::two_cluster_laplace(0.2);
        cfg.n_list = vec![1000, 2000];
        assert!(matches!(cfg.validate_for_rates(), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::two_cluster_laplace(0.2);
        cfg.model = TrueDensity::Mixture {
            components: vec![Component { mean: vec![0.9], scale: 0.15, weight: 1.0 }],
        };
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig::two_cluster_laplace(0.2);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ns = [1000, 2000, 4000, 8000];
        let m: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.7)).collect();
        assert!((log_log_slope(&ns, &m) + 0.7).abs() < 1e-12);
    }
}
