//! Band-limited base kernels, noise models and tabulated deconvolution kernels.
//!
//! All kernels and noise laws handled here factor over coordinates, so a
//! `d`-dimensional deconvolution kernel is the tensor product of `d`
//! one-dimensional tables. The Fourier convention is
//! `F[g](t) = ∫ g(x) e^{itx} dx`, with inverse `(2π)^{-1} ∫ h(t) e^{-itx} dt`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quad::{composite_rule, trapezoid};

/// Half-width of the window on which the L1 norm of the base kernel is computed.
pub const L1_WINDOW: f64 = 50.0;

/// Fraction of the band on which the flat-top (`SincPower`) spectrum equals one.
pub const PLATEAU: f64 = 0.5;

const PANEL_ORDER: usize = 16;

/// Shape of the one-dimensional base kernel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KernelKind {
    /// `K(x) = sin(Sx) / (πx)`, spectrum equal to one on `[-S, S]`.
    Sinc,
    /// Flat-top kernel: spectrum equal to one on `[-S/2, S/2]` and tapered to
    /// zero at `±S` by a polynomial that is `C^order` at both junctions. The
    /// kernel has vanishing moments of every order and finite absolute
    /// moments up to `order`.
    SincPower { order: u32 },
}

impl KernelKind {
    /// Parses a kernel name as used in configuration files.
    pub fn from_name(name: &str, order: u32) -> Result<Self> {
        match name {
            "sinc" => Ok(KernelKind::Sinc),
            "sinc_power" | "sincpower" | "flat_top" => Ok(KernelKind::SincPower { order }),
            other => Err(Error::config(format!("unsupported kernel `{other}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            KernelKind::Sinc => "sinc".into(),
            KernelKind::SincPower { order } => format!("sinc_power{order}"),
        }
    }

    /// Spectral profile on the normalised band `u ∈ [-1, 1]`; zero outside.
    pub fn profile(&self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match *self {
            KernelKind::Sinc => 1.0,
            KernelKind::SincPower { order } => {
                if a <= PLATEAU {
                    1.0
                } else {
                    1.0 - smoothstep(order, (a - PLATEAU) / (1.0 - PLATEAU))
                }
            }
        }
    }

    /// Points of the normalised band where the profile is not smooth.
    fn profile_breakpoints(&self) -> &'static [f64] {
        match self {
            KernelKind::Sinc => &[],
            KernelKind::SincPower { .. } => &[PLATEAU],
        }
    }
}

/// `C^m` smoothstep: `x^{m+1} Σ_{k≤m} C(m+k, k) (1-x)^k` on `[0, 1]`.
fn smoothstep(m: u32, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let mut sum = 0.0;
    let mut binom = 1.0; // C(m+k, k)
    for k in 0..=m {
        if k > 0 {
            binom *= (m + k) as f64 / k as f64;
        }
        sum += binom * (1.0 - x).powi(k as i32);
    }
    x.powi(m as i32 + 1) * sum
}

/// A separable, band-limited base kernel `K` with its Fourier support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Fourier support `S` per axis.
    pub support: Vec<f64>,
    /// `‖K‖₁` computed on `[-L1_WINDOW, L1_WINDOW]^d`.
    pub l1_norm: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, support: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::config("kernel support needs at least one axis"));
        }
        if support.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("kernel support must be positive and finite"));
        }
        let mut spec = KernelSpec {
            kind,
            support,
            l1_norm: f64::NAN,
        };
        spec.l1_norm = (0..spec.dim()).map(|v| spec.axis_l1_norm(v)).product();
        Ok(spec)
    }

    /// Sinc kernel with unit support on every axis.
    pub fn sinc(dim: usize) -> Self {
        Self::new(KernelKind::Sinc, vec![1.0; dim]).expect("unit support is valid")
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }

    /// Kernel order `m` (vanishing moments with finite absolute moments).
    pub fn order(&self) -> u32 {
        match self.kind {
            KernelKind::Sinc => 0,
            KernelKind::SincPower { order } => order,
        }
    }

    pub fn name(&self) -> String {
        let s: Vec<String> = self.support.iter().map(|s| format!("{s}")).collect();
        format!("{}[S={}]", self.kind.name(), s.join(","))
    }

    /// `F[K_v](t)` along one axis.
    pub fn fourier_axis(&self, axis: usize, t: f64) -> f64 {
        self.kind.profile(t / self.support[axis])
    }

    /// `F[K](t)` for a point of the frequency domain.
    pub fn fourier(&self, t: &[f64]) -> f64 {
        t.iter()
            .enumerate()
            .map(|(v, &tv)| self.fourier_axis(v, tv))
            .product()
    }

    /// Upper bound `K₁` on `|F[K]|`.
    pub fn fourier_sup(&self) -> f64 {
        1.0
    }

    /// `K_v(x)` along one axis.
    pub fn value_axis(&self, axis: usize, x: f64) -> f64 {
        let s = self.support[axis];
        match self.kind {
            KernelKind::Sinc => sinc_kernel(s, x),
            KernelKind::SincPower { .. } => {
                let rule = self.axis_rule(axis, s, 2048);
                rule.iter()
                    .map(|(t, w)| w * self.fourier_axis(axis, *t) * (t * x).cos())
                    .sum::<f64>()
                    / PI
            }
        }
    }

    /// `K(x) = Π_v K_v(x_v)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(v, &xv)| self.value_axis(v, xv))
            .product()
    }

    /// Values `K_v(jΔ)` for `j = 0..count`.
    fn axis_values_on_grid(&self, axis: usize, step: f64, count: usize) -> Vec<f64> {
        let s = self.support[axis];
        match self.kind {
            KernelKind::Sinc => (0..count)
                .map(|j| sinc_kernel(s, j as f64 * step))
                .collect(),
            KernelKind::SincPower { .. } => {
                let phase = s * step * count as f64;
                let nodes = ((phase / 4.0).ceil() as usize * PANEL_ORDER).clamp(1024, 1 << 16);
                let rule = self.axis_rule(axis, s, nodes);
                let coeffs: Vec<(f64, f64)> = rule
                    .iter()
                    .map(|(t, w)| (*t, w * self.fourier_axis(axis, *t) / PI))
                    .collect();
                cosine_sum_on_grid(&coeffs, step, count)
            }
        }
    }

    fn axis_rule(&self, _axis: usize, band: f64, nodes: usize) -> Vec<(f64, f64)> {
        let breaks: Vec<f64> = self
            .kind
            .profile_breakpoints()
            .iter()
            .map(|b| b * band)
            .collect();
        composite_rule(0.0, band, &breaks, nodes, PANEL_ORDER)
    }

    fn axis_l1_norm(&self, axis: usize) -> f64 {
        let step = (0.05 / self.support[axis]).min(0.005);
        let count = (L1_WINDOW / step).round() as usize + 1;
        let vals: Vec<f64> = self
            .axis_values_on_grid(axis, step, count)
            .into_iter()
            .map(f64::abs)
            .collect();
        2.0 * trapezoid(&vals, step)
    }

    /// `∫K` computed in the spatial domain against a wide Gaussian window.
    ///
    /// The window makes the oscillating tails integrable; its effect on the
    /// result is `exp(-(W·plateau·S)²/2)`, far below double precision here.
    pub fn integral(&self) -> f64 {
        (0..self.dim())
            .map(|v| {
                let width = 20.0 / (PLATEAU * self.support[v]).min(1.0);
                let reach = 8.0 * width;
                let step = (0.05 / self.support[v]).min(0.01);
                let count = (reach / step).round() as usize + 1;
                let vals: Vec<f64> = self
                    .axis_values_on_grid(v, step, count)
                    .into_iter()
                    .enumerate()
                    .map(|(j, k)| {
                        let x = j as f64 * step;
                        k * (-0.5 * (x / width).powi(2)).exp()
                    })
                    .collect();
                2.0 * trapezoid(&vals, step)
            })
            .product()
    }

    /// `∫|K(u)| |u|^s du` over the L1 window, per axis (the same on every
    /// axis for isotropic supports).
    pub fn abs_moment(&self, axis: usize, s: f64) -> f64 {
        let step = (0.05 / self.support[axis]).min(0.005);
        let count = (L1_WINDOW / step).round() as usize + 1;
        let vals: Vec<f64> = self
            .axis_values_on_grid(axis, step, count)
            .into_iter()
            .enumerate()
            .map(|(j, k)| k.abs() * (j as f64 * step).powf(s))
            .collect();
        2.0 * trapezoid(&vals, step)
    }
}

fn sinc_kernel(s: f64, x: f64) -> f64 {
    if x.abs() < 1e-8 {
        // sin(Sx)/(πx) = S/π (1 - (Sx)²/6 + ...)
        s / PI * (1.0 - (s * x).powi(2) / 6.0)
    } else {
        (s * x).sin() / (PI * x)
    }
}

/// `Σ_m c_m cos(t_m · jΔ)` for `j = 0..count`, by complex rotation per node.
fn cosine_sum_on_grid(coeffs: &[(f64, f64)], step: f64, count: usize) -> Vec<f64> {
    let mut acc = vec![0.0; count];
    for &(t, c) in coeffs {
        let (sin_d, cos_d) = (t * step).sin_cos();
        let (mut re, mut im) = (1.0, 0.0);
        for (j, a) in acc.iter_mut().enumerate() {
            if j % 512 == 0 && j > 0 {
                // reset accumulated rotation error
                let (s, c) = (t * step * j as f64).sin_cos();
                re = c;
                im = s;
            }
            *a += c * re;
            let nre = re * cos_d - im * sin_d;
            im = re * sin_d + im * cos_d;
            re = nre;
        }
    }
    acc
}

/// Tabulated base kernel on a symmetric 1-d offset grid, one column per axis.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub offsets: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl KernelTable {
    /// Product kernel at a point whose coordinates are offset indices.
    pub fn product_at(&self, idx: &[usize]) -> f64 {
        idx.iter()
            .enumerate()
            .map(|(v, &i)| self.values[v][i])
            .product()
    }
}

/// Tabulates the base kernel on a 1-d grid symmetric about zero.
pub fn build_kernel(spec: &KernelSpec, offsets: &[f64]) -> Result<KernelTable> {
    let n = offsets.len();
    if n == 0 {
        return Err(Error::config("empty offset grid"));
    }
    for i in 0..n {
        if (offsets[i] + offsets[n - 1 - i]).abs() > 1e-12 * (1.0 + offsets[i].abs()) {
            return Err(Error::config("offset grid must be symmetric about 0"));
        }
    }
    let values = (0..spec.dim())
        .map(|v| offsets.iter().map(|&x| spec.value_axis(v, x)).collect())
        .collect();
    Ok(KernelTable {
        offsets: offsets.to_vec(),
        values,
    })
}

/// Noise law family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum NoiseKind {
    /// No noise: `ε ≡ 0`.
    Dirac,
    /// Independent Laplace coordinates with the given scales,
    /// `F[η_v](t) = 1 / (1 + σ_v² t²)`.
    Laplace { scales: Vec<f64> },
}

/// Known noise density with its ill-posedness parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub dim: usize,
    /// Polynomial decay exponents of the characteristic function.
    pub beta: Vec<f64>,
    /// Constant of the lower bound on `|F[η]|`.
    pub rho: f64,
    /// `η∞ = ‖η‖_∞` (nominal value 1 for Dirac noise, which has no density).
    pub eta_sup: f64,
}

impl NoiseModel {
    /// Noise-free observations. `beta` is the exponent used downstream for
    /// bandwidth nets and thresholds.
    pub fn dirac(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::config("beta must be a non-empty vector of positive reals"));
        }
        Ok(NoiseModel {
            kind: NoiseKind::Dirac,
            dim: beta.len(),
            beta,
            rho: 1.0,
            eta_sup: 1.0,
        })
    }

    /// One-dimensional Laplace noise.
    pub fn laplace(scale: f64) -> Result<Self> {
        Self::product_laplace(vec![scale])
    }

    /// Independent Laplace noise per coordinate.
    pub fn product_laplace(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("Laplace scales must be positive and finite"));
        }
        // 1/(1+σ²t²) ≥ ρ_v · 2/(1+t²) holds with ρ_v = min(1, 1/σ²)/2
        let rho = scales.iter().map(|s| 0.5 * (1.0 / (s * s)).min(1.0)).product();
        let eta_sup = scales.iter().map(|s| 1.0 / (2.0 * s)).product();
        Ok(NoiseModel {
            dim: scales.len(),
            beta: vec![2.0; scales.len()],
            kind: NoiseKind::Laplace { scales },
            rho,
            eta_sup,
        })
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_beta(mut self, beta: Vec<f64>) -> Self {
        self.beta = beta;
        self
    }

    /// `β̄ = Σ_v β_v`.
    pub fn beta_bar(&self) -> f64 {
        self.beta.iter().sum()
    }

    pub fn name(&self) -> String {
        match &self.kind {
            NoiseKind::Dirac => "dirac".into(),
            NoiseKind::Laplace { scales } => {
                let s: Vec<String> = scales.iter().map(|s| format!("{s}")).collect();
                format!("laplace[{}]", s.join(","))
            }
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.kind, NoiseKind::Dirac)
    }

    /// `F[η_v](t)`.
    pub fn cf_axis(&self, axis: usize, t: f64) -> f64 {
        match &self.kind {
            NoiseKind::Dirac => 1.0,
            NoiseKind::Laplace { scales } => 1.0 / (1.0 + (scales[axis] * t).powi(2)),
        }
    }

    /// `F[η](t)`.
    pub fn cf(&self, t: &[f64]) -> f64 {
        t.iter()
            .enumerate()
            .map(|(v, &tv)| self.cf_axis(v, tv))
            .product()
    }

    /// Marginal density `η_v(x)`; `None` for Dirac noise.
    pub fn density_axis(&self, axis: usize, x: f64) -> Option<f64> {
        match &self.kind {
            NoiseKind::Dirac => None,
            NoiseKind::Laplace { scales } => {
                let s = scales[axis];
                Some((-x.abs() / s).exp() / (2.0 * s))
            }
        }
    }

    /// Lower bound `ρ Π_v ((t_v² + 1)/2)^{-β_v/2}`.
    pub fn assumed_lower_bound(&self, t: &[f64]) -> f64 {
        self.rho
            * t.iter()
                .zip(&self.beta)
                .map(|(tv, b)| ((tv * tv + 1.0) / 2.0).powf(-b / 2.0))
                .product::<f64>()
    }
}

/// Outcome of checking the lower bound on the noise characteristic function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseCheck {
    pub holds: bool,
    /// Minimum over the grid of `|F[η](t)|` divided by the assumed lower bound.
    pub worst_ratio: f64,
}

/// Checks `|F[η](t)| ≥ ρ Π ((t_v²+1)/2)^{-β_v/2}` on the tensor grid built
/// from `t_grid` on every axis. Ratios within 1e-12 of one count as holding.
pub fn check_noise_assumption(noise: &NoiseModel, t_grid: &[f64]) -> NoiseCheck {
    let d = noise.dim;
    let m = t_grid.len();
    let total = m.pow(d as u32);
    let mut worst = f64::INFINITY;
    let mut t = vec![0.0; d];
    for flat in 0..total {
        let mut r = flat;
        for tv in t.iter_mut() {
            *tv = t_grid[r % m];
            r /= m;
        }
        let ratio = noise.cf(&t).abs() / noise.assumed_lower_bound(&t);
        worst = worst.min(ratio);
    }
    NoiseCheck {
        holds: worst >= 1.0 - 1e-12,
        worst_ratio: worst,
    }
}

/// Resolution parameters of a deconvolution kernel table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    /// Quadrature nodes across the band `[-S/λ, S/λ]`.
    pub fourier_samples: usize,
    /// Spatial samples per radian of the highest frequency `S/λ`.
    pub oversample: f64,
    /// Tabulated offsets cover `[-range, range]` (rounded up to a whole step).
    pub range: f64,
    /// When set, the spatial step is shrunk to divide this length exactly
    /// (the spacing of a density grid), enabling exact binned evaluation.
    #[serde(default)]
    pub align_to: Option<f64>,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            fourier_samples: 4096,
            oversample: 16.0,
            range: 8.0,
            align_to: None,
        }
    }
}

/// One axis of a deconvolution kernel table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisTable {
    /// Offsets are `-range + j·step`, `j = 0..values.len()`.
    pub range: f64,
    pub step: f64,
    pub values: Vec<f64>,
    /// Band edge `T = S_v / λ`.
    pub fourier_truncation: f64,
    /// Quadrature nodes on `[0, T]`: `(t, weight, F[K_λ](t))`.
    pub spectrum: Vec<(f64, f64, f64)>,
}

impl AxisTable {
    pub fn offsets(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|j| -self.range + j as f64 * self.step)
            .collect()
    }

    /// Linear interpolation of the tabulated kernel.
    #[inline]
    pub fn eval(&self, u: f64) -> Option<f64> {
        let pos = (u + self.range) / self.step;
        if !(pos >= 0.0) {
            return None;
        }
        let j = pos.floor() as usize;
        let last = self.values.len() - 1;
        if j >= last {
            return if j == last && pos - last as f64 <= 1e-9 {
                Some(self.values[last])
            } else {
                None
            };
        }
        let frac = pos - j as f64;
        Some(self.values[j] + frac * (self.values[j + 1] - self.values[j]))
    }

    /// `F[K_λ,v](t)` reconstructed from the stored spectral samples by
    /// Lagrange interpolation inside each quadrature panel; zero outside the band.
    pub fn fourier(&self, t: f64) -> f64 {
        let a = t.abs();
        if a > self.fourier_truncation {
            return 0.0;
        }
        let panels = self.spectrum.len() / PANEL_ORDER;
        // panels are contiguous and sorted; locate by bisection on panel ends
        let mut lo = 0;
        let mut hi = panels;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.spectrum[mid * PANEL_ORDER].0 <= a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let panel = &self.spectrum[lo * PANEL_ORDER..(lo + 1) * PANEL_ORDER];
        let mut sum = 0.0;
        for (i, (ti, _, fi)) in panel.iter().enumerate() {
            let mut basis = 1.0;
            for (j, (tj, _, _)) in panel.iter().enumerate() {
                if i != j {
                    basis *= (a - tj) / (ti - tj);
                }
            }
            sum += basis * fi;
        }
        sum
    }

    /// `∫ K_λ,v²` by Parseval from the spectral samples.
    pub fn l2_norm_sq_parseval(&self) -> f64 {
        self.spectrum.iter().map(|(_, w, f)| w * f * f).sum::<f64>() / PI
    }

    /// `∫ K_λ,v²` over the tabulated window.
    pub fn l2_norm_sq_spatial(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        trapezoid(&sq, self.step)
    }
}

/// Deconvolution kernel `K_λ` tabulated per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvKernelTable {
    pub lambda: f64,
    pub fourier_samples: usize,
    pub axes: Vec<AxisTable>,
}

impl DeconvKernelTable {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Smallest tabulated half-range across axes.
    pub fn range(&self) -> f64 {
        self.axes.iter().map(|a| a.range).fold(f64::INFINITY, f64::min)
    }

    /// `K_λ(u)` by multilinear interpolation of the tensor table.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        let mut prod = 1.0;
        for (axis, &uv) in self.axes.iter().zip(u) {
            prod *= axis.eval(uv).ok_or(Error::Range {
                lambda: self.lambda,
                offset: uv,
                range: axis.range,
            })?;
        }
        Ok(prod)
    }

    /// `F[K_λ](t)` from the stored spectral samples.
    pub fn fourier(&self, t: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(t)
            .map(|(a, &tv)| a.fourier(tv))
            .product()
    }

    /// `sup_z ∫ K_λ(z - x)² dx`, which equals `‖K_λ‖₂²`; computed by Parseval.
    pub fn sup_l2_norm_sq(&self) -> f64 {
        self.axes.iter().map(AxisTable::l2_norm_sq_parseval).product()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Builds `K_λ(x) = (2π)^{-1} ∫_{|t|≤S/λ} F[K](λt)/F[η](t) e^{-itx} dt` per axis.
pub fn build_deconv_kernel(
    spec: &KernelSpec,
    noise: &NoiseModel,
    lambda: f64,
    cfg: &TableConfig,
) -> Result<DeconvKernelTable> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!("bandwidth must be positive, got {lambda}")));
    }
    if spec.dim() != noise.dim {
        return Err(Error::config(format!(
            "kernel dimension {} does not match noise dimension {}",
            spec.dim(),
            noise.dim
        )));
    }
    if cfg.fourier_samples < 2 * PANEL_ORDER || !(cfg.oversample > 0.0) || !(cfg.range > 0.0) {
        return Err(Error::config("invalid kernel table configuration"));
    }
    let mut axes = Vec::with_capacity(spec.dim());
    for v in 0..spec.dim() {
        let band = spec.support[v] / lambda;
        let rule = spec.axis_rule(v, band, cfg.fourier_samples / 2);
        let mut spectrum = Vec::with_capacity(rule.len());
        for &(t, w) in &rule {
            let cf = noise.cf_axis(v, t);
            if cf.abs() < 1e-12 {
                return Err(Error::IllPosed {
                    lambda,
                    t,
                    value: cf,
                });
            }
            spectrum.push((t, w, spec.fourier_axis(v, lambda * t) / cf));
        }
        let step = 1.0 / (cfg.oversample * band);
        let (step, half, range) = match cfg.align_to {
            Some(h) if h > 0.0 => {
                let step = h / (h / step).ceil();
                let half = (cfg.range / step - 1e-9).ceil() as usize;
                (step, half, half as f64 * step)
            }
            _ => {
                let half = (cfg.range / step).ceil() as usize;
                (cfg.range / half as f64, half, cfg.range)
            }
        };
        let coeffs: Vec<(f64, f64)> = spectrum.iter().map(|(t, w, f)| (*t, w * f / PI)).collect();
        let positive = cosine_sum_on_grid(&coeffs, step, half + 1);
        let mut values = Vec::with_capacity(2 * half + 1);
        values.extend(positive[1..].iter().rev());
        values.extend_from_slice(&positive);
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                lambda,
                reason: "non-finite deconvolution kernel value".into(),
            });
        }
        axes.push(AxisTable {
            range,
            step,
            values,
            fourier_truncation: band,
            spectrum,
        });
    }
    Ok(DeconvKernelTable {
        lambda,
        fourier_samples: cfg.fourier_samples,
        axes,
    })
}

/// Direct evaluation of `K_λ,v(x)` from the spectral samples (no interpolation).
pub fn deconv_kernel_direct(table: &DeconvKernelTable, axis: usize, x: f64) -> f64 {
    table.axes[axis]
        .spectrum
        .iter()
        .map(|(t, w, f)| w * f * (t * x).cos())
        .sum::<f64>()
        / PI
}

/// Closed form of the sinc deconvolution kernel under Laplace noise,
/// `λ^{-1}[K(x/λ) - σ²λ^{-2} K''(x/λ)]` written out for `K = sinc` with support `S`.
pub fn sinc_laplace_closed_form(support: f64, sigma: f64, lambda: f64, x: f64) -> f64 {
    let t = support / lambda;
    let s2 = sigma * sigma;
    if x.abs() < 1e-4 {
        // series to O(x²)
        let base = t + s2 * t.powi(3) / 3.0;
        let curv = t.powi(3) / 3.0 + s2 * t.powi(5) / 5.0;
        return (base - 0.5 * curv * x * x) / PI;
    }
    let (s, c) = (t * x).sin_cos();
    (s / x + s2 * (t * t * s / x + 2.0 * t * c / (x * x) - 2.0 * s / x.powi(3))) / PI
}

/// Spatial check of the deconvolution identity along one axis:
/// `∫ K_λ,v(x) η_v(x - u) dx` against `λ^{-1} K_v(u/λ)`. Returns the relative error.
pub fn convolution_identity_error(
    table: &DeconvKernelTable,
    spec: &KernelSpec,
    noise: &NoiseModel,
    axis: usize,
    u: f64,
) -> f64 {
    let at = &table.axes[axis];
    let lambda = table.lambda;
    let target = spec.value_axis(axis, u / lambda) / lambda;
    let got = if noise.is_dirac() {
        at.eval(u).unwrap_or(f64::NAN)
    } else {
        let offs = at.offsets();
        // split the trapezoid at the kink of η at x = u
        let vals: Vec<f64> = offs
            .iter()
            .zip(&at.values)
            .map(|(&x, &k)| k * noise.density_axis(axis, x - u).unwrap_or(0.0))
            .collect();
        let split = offs.partition_point(|&x| x < u);
        let kink = at.eval(u).unwrap_or(0.0) * noise.density_axis(axis, 0.0).unwrap_or(0.0);
        let mut left = vals[..split].to_vec();
        let left_gap = u - offs[split - 1];
        let mut right = vec![kink];
        right.extend_from_slice(&vals[split..]);
        let right_gap = offs[split] - u;
        left.push(kink);
        let inner_left = trapezoid(&left[..left.len() - 1], at.step);
        let inner_right = trapezoid(&right[1..], at.step);
        inner_left
            + 0.5 * left_gap * (left[left.len() - 2] + kink)
            + inner_right
            + 0.5 * right_gap * (kink + right[1])
    };
    ((got - target) / target).abs()
}

/// On-disk cache of deconvolution tables keyed by kernel, noise, bandwidth and resolution.
#[derive(Clone, Debug)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    /// Environment variable naming the cache directory.
    pub const ENV: &'static str = "NOISY_CLUSTER_CACHE";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(Self::ENV).map(|d| TableCache::new(PathBuf::from(d)))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(spec: &KernelSpec, noise: &NoiseModel, lambda: f64, cfg: &TableConfig) -> String {
        let raw = format!(
            "{}|{}|{:016x}|{}|{:016x}|{:016x}|{:016x}",
            spec.name(),
            noise.name(),
            lambda.to_bits(),
            cfg.fourier_samples,
            cfg.oversample.to_bits(),
            cfg.range.to_bits(),
            cfg.align_to.map_or(0, f64::to_bits)
        );
        hex::encode(Sha256::digest(raw.as_bytes()))
    }

    /// Loads the table from the cache or builds and stores it.
    pub fn get_or_build(
        &self,
        spec: &KernelSpec,
        noise: &NoiseModel,
        lambda: f64,
        cfg: &TableConfig,
    ) -> Result<DeconvKernelTable> {
        let path = self
            .dir
            .join(format!("{}.json", Self::key(spec, noise, lambda, cfg)));
        if let Ok(s) = fs::read_to_string(&path) {
            if let Ok(t) = DeconvKernelTable::from_json(&s) {
                return Ok(t);
            }
            log::warn!("ignoring unreadable cached table {}", path.display());
        }
        let table = build_deconv_kernel(spec, noise, lambda, cfg)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, table.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(table)
    }
}
