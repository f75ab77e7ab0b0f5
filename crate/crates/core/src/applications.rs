//! Noisy quantile estimation through the generic ERC rule.
//!
//! The variance envelope here has the shape of the clustering one and is
//! asserted rather than derived; treat this instantiation as experimental.

use std::sync::Arc;

use serde::Serialize;

use crate::density::{estimate_density, DensityField, GridDomain, Sample};
use crate::erc::{general_erc, BandwidthGrid, EnvelopePlacement, GeneralSelection, RiskOracle};
use crate::error::{Error, Result};
use crate::kernels::{build_deconv_kernel, KernelSpec, NoiseModel, TableConfig};

/// Half-width of the quantile domain.
pub const QUANTILE_HALF_WIDTH: f64 = 2.0;
/// Nodes of the coarse profile scan.
pub const COARSE_POINTS: usize = 200;
/// Local minima on the coarse scan from which the profile counts as multimodal.
pub const MULTIMODAL_MINIMA: usize = 3;

/// Pinball risks of a 1-d sample over a bandwidth net.
#[derive(Clone, Debug)]
pub struct QuantileProblem {
    pub tau: f64,
    pub net: BandwidthGrid,
    pub grid: Arc<GridDomain>,
    /// `f̂_λ` on `grid`, one per net bandwidth.
    pub fields: Vec<DensityField>,
    /// Multiplier of the variance envelope.
    pub scale_q: f64,
}

/// Default domain: 800 cells on `[-2, 2]`.
pub fn quantile_domain() -> Arc<GridDomain> {
    Arc::new(GridDomain::cube(1, QUANTILE_HALF_WIDTH, 800).expect("valid domain"))
}

impl QuantileProblem {
    /// Estimates `f̂_λ` on `grid` for every bandwidth of `net`.
    pub fn new(
        tau: f64,
        sample: &Sample,
        kernel: &KernelSpec,
        noise: &NoiseModel,
        net: BandwidthGrid,
        grid: Arc<GridDomain>,
        scale_q: f64,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config(format!("tau = {tau} is not in (0, 1)")));
        }
        if sample.dim() != 1 || grid.dim() != 1 || kernel.dim() != 1 {
            return Err(Error::config("quantile estimation is one-dimensional"));
        }
        let range = grid.half_width() + sample.max_abs();
        let cfg = TableConfig {
            range: range.max(1.0),
            align_to: Some(grid.step()),
            ..TableConfig::default()
        };
        let fields = net
            .net
            .iter()
            .map(|&l| {
                let table = build_deconv_kernel(kernel, noise, l, &cfg)?;
                estimate_density(sample, &table, &grid)
            })
            .collect::<Result<_>>()?;
        Self::from_fields(tau, net, grid, fields, scale_q)
    }

    pub fn from_fields(
        tau: f64,
        net: BandwidthGrid,
        grid: Arc<GridDomain>,
        fields: Vec<DensityField>,
        scale_q: f64,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config(format!("tau = {tau} is not in (0, 1)")));
        }
        if fields.len() != net.len() {
            return Err(Error::config("one field per net bandwidth is required"));
        }
        if grid.dim() != 1 || fields.iter().any(|f| !Arc::ptr_eq(&f.grid, &grid)) {
            return Err(Error::config("fields must live on the one-dimensional problem grid"));
        }
        Ok(QuantileProblem { tau, net, grid, fields, scale_q })
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::from_fields(tau, self.net.clone(), Arc::clone(&self.grid), self.fields.clone(), self.scale_q)
    }

    pub fn with_scale(&self, scale_q: f64) -> Self {
        QuantileProblem { scale_q, ..self.clone() }
    }
}

/// `∫_a^b ρ_τ(x − η) dx` with `ρ_τ(u) = u(τ − 1{u ≤ 0})`.
fn pinball_integral(tau: f64, a: f64, b: f64, eta: f64) -> f64 {
    let p = |u: f64| if u >= 0.0 { 0.5 * tau * u * u } else { 0.5 * (tau - 1.0) * u * u };
    p(b - eta) - p(a - eta)
}

/// `∫ (x − η)(τ − 1{x ≤ η}) f(x) dx` with `f` constant on each grid cell.
pub fn pinball_risk(field: &DensityField, tau: f64, eta: f64) -> f64 {
    let h = field.grid.step();
    field
        .grid
        .axis()
        .iter()
        .zip(&field.values)
        .map(|(&x, &v)| v * pinball_integral(tau, x - 0.5 * h, x + 0.5 * h, eta))
        .sum()
}

/// `ℛ_n^λ(η)` at the `index`-th net bandwidth.
pub fn quantile_emp_risk(problem: &QuantileProblem, index: usize, eta: f64) -> f64 {
    pinball_risk(&problem.fields[index], problem.tau, eta)
}

/// Minimizer of the empirical pinball risk.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantileFit {
    pub eta: f64,
    pub risk: f64,
    /// Local minima found by the coarse scan.
    pub local_minima: usize,
    /// Set when the coarse profile has at least [`MULTIMODAL_MINIMA`] local minima;
    /// `eta` is then the coarse global minimum.
    pub multimodal: bool,
}

/// Minimizes `η ↦ pinball_risk(field, τ, η)` over the grid span.
pub fn minimize_pinball(field: &DensityField, tau: f64) -> QuantileFit {
    let hw = field.grid.half_width();
    let f = |eta: f64| pinball_risk(field, tau, eta);
    let step = 2.0 * hw / (COARSE_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..COARSE_POINTS).map(|i| -hw + i as f64 * step).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = (0..xs.len())
        .min_by(|&a, &b| ys[a].total_cmp(&ys[b]))
        .unwrap_or(0);
    let local_minima = (0..xs.len())
        .filter(|&i| {
            let left = i == 0 || ys[i - 1] > ys[i];
            let right = i + 1 == xs.len() || ys[i + 1] >= ys[i];
            left && right
        })
        .count();
    if local_minima >= MULTIMODAL_MINIMA {
        log::warn!("pinball profile has {local_minima} local minima; using the coarse minimum");
        return QuantileFit {
            eta: xs[best],
            risk: ys[best],
            local_minima,
            multimodal: true,
        };
    }
    let mut lo = xs[best.saturating_sub(1)];
    let mut hi = xs[(best + 1).min(xs.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-3 * field.grid.step() {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    // parabola through the final bracket
    let (a, b, c) = (lo, 0.5 * (lo + hi), hi);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let den = (b - a) * (fb - fc) - (b - c) * (fb - fa);
    let mut eta = b;
    if den.abs() > 0.0 {
        let v = b - 0.5 * ((b - a).powi(2) * (fb - fc) - (b - c).powi(2) * (fb - fa)) / den;
        if v.is_finite() && (a..=c).contains(&v) && f(v) <= fb {
            eta = v;
        }
    }
    QuantileFit {
        eta,
        risk: f(eta),
        local_minima,
        multimodal: false,
    }
}

/// `q̂_τ^λ` at the `index`-th net bandwidth.
pub fn quantile_minimize(problem: &QuantileProblem, index: usize) -> QuantileFit {
    minimize_pinball(&problem.fields[index], problem.tau)
}

/// `scale_q · λ^{-2β̄} (t + log n) / n`.
pub fn quantile_var_envelope(problem: &QuantileProblem, lambda: f64, t: f64) -> f64 {
    let n = problem.net.n as f64;
    problem.scale_q * lambda.powf(-2.0 * problem.net.beta_bar) * (t + n.ln()) / n
}

/// The quantile problem seen through [`RiskOracle`].
pub struct QuantileOracle<'a> {
    pub problem: &'a QuantileProblem,
}

impl RiskOracle for QuantileOracle<'_> {
    type Param = f64;

    fn parameter_net(&self) -> &[f64] {
        &self.problem.net.net
    }

    fn emp_risk(&self, index: usize, eta: &f64) -> f64 {
        quantile_emp_risk(self.problem, index, *eta)
    }

    fn minimize(&self, index: usize) -> Result<f64> {
        Ok(quantile_minimize(self.problem, index).eta)
    }

    fn var_envelope(&self, lambda: f64, t: f64) -> f64 {
        quantile_var_envelope(self.problem, lambda, t)
    }
}

/// Generic ERC on a quantile problem.
pub fn select_quantile(
    problem: &QuantileProblem,
    t: f64,
    placement: EnvelopePlacement,
) -> Result<GeneralSelection<f64>> {
    general_erc(&QuantileOracle { problem }, t, placement)
}

/// Calibrated envelope multiplier.
#[derive(Clone, Debug, Serialize)]
pub struct QuantileCalibration {
    pub scale_q: f64,
    /// `(scale, mean excess of the selection / mean best-in-net excess)`.
    pub ratios: Vec<(f64, f64)>,
    pub reached: bool,
}

/// Smallest `scale_q` among `scales` whose mean excess over `pilots` is within
/// `target` times the mean best-in-net excess; the best ratio when none is.
///
/// `excess(η)` is the true excess pinball risk of `η`.
pub fn calibrate_quantile_scale(
    pilots: &[QuantileProblem],
    scales: &[f64],
    t: f64,
    placement: EnvelopePlacement,
    target: f64,
    excess: impl Fn(f64) -> f64,
) -> Result<QuantileCalibration> {
    if pilots.is_empty() || scales.is_empty() {
        return Err(Error::config("calibration needs pilots and candidate scales"));
    }
    let etas: Vec<Vec<f64>> = pilots
        .iter()
        .map(|p| (0..p.net.len()).map(|i| quantile_minimize(p, i).eta).collect())
        .collect();
    let best: f64 = etas
        .iter()
        .map(|e| e.iter().map(|&x| excess(x)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / pilots.len() as f64;
    let mut ratios = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut hat = 0.0;
        for (p, e) in pilots.iter().zip(&etas) {
            let sel = select_quantile(&p.with_scale(s), t, placement)?;
            hat += excess(e[sel.index]);
        }
        hat /= pilots.len() as f64;
        ratios.push((s, hat / best.max(f64::MIN_POSITIVE)));
    }
    let (scale_q, reached) = match ratios.iter().find(|(_, r)| *r <= target) {
        Some(&(s, _)) => (s, true),
        None => {
            let &(s, _) = ratios
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            (s, false)
        }
    };
    Ok(QuantileCalibration { scale_q, ratios, reached })
}
