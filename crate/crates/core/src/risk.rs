//! k-means loss, true and empirical clustering risks, the oracle set of a
//! known model and the margin probe.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::{DensityField, GridDomain, Sample};
use crate::error::{Error, Result};
use crate::kernels::DeconvKernelTable;
use crate::minimizer::{brute_force_min, lloyd, seed_codebook, MinimizeConfig};
use crate::rng::{derive_seed, rng_from};

/// Slack allowed on the unit-ball constraint.
const BALL_SLACK: f64 = 1e-12;

/// Tolerance below which a negative excess risk is treated as quadrature noise.
pub const EXCESS_TOLERANCE: f64 = 1e-6;

/// `k` centers in the closed unit ball, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    dim: usize,
    centers: Vec<f64>,
}

impl Codebook {
    pub fn new(centers: &[Vec<f64>]) -> Result<Self> {
        let dim = centers.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::config("codebook needs k ≥ 1 centers of equal dimension"));
        }
        Self::from_flat(dim, centers.concat())
    }

    pub fn from_flat(dim: usize, centers: Vec<f64>) -> Result<Self> {
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::config("codebook needs k ≥ 1 centers of dimension d ≥ 1"));
        }
        let cb = Codebook { dim, centers };
        for j in 0..cb.k() {
            let r2: f64 = cb.center(j).iter().map(|x| x * x).sum();
            if !(r2 <= 1.0 + BALL_SLACK) {
                return Err(Error::config(format!(
                    "center {j} has norm {} outside the unit ball",
                    r2.sqrt()
                )));
            }
        }
        Ok(cb)
    }

    /// Builds a codebook from centers known to be feasible.
    pub(crate) fn from_flat_unchecked(dim: usize, centers: Vec<f64>) -> Self {
        Codebook { dim, centers }
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.centers
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|j| self.center(j).to_vec()).collect()
    }

    /// Index of the nearest center, ties to the lowest index.
    #[inline]
    pub fn assign(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.k() {
            let d = sq_dist(self.center(j), x);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// `min_σ Σ_j ‖c_j − c'_σ(j)‖²` over relabelings.
    pub fn distance_sq(&self, other: &Codebook) -> f64 {
        let k = self.k();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let d: f64 = (0..k).map(|j| sq_dist(self.center(j), other.center(p[j]))).sum();
            best = best.min(d);
        });
        best
    }

    /// Centers sorted lexicographically; a canonical labeling for comparisons.
    pub fn sorted(&self) -> Codebook {
        let mut rows = self.to_rows();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Codebook::from_flat_unchecked(self.dim, rows.concat())
    }
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `γ(c, x) = min_j ‖x − c_j‖²`.
pub fn kmeans_loss(c: &Codebook, x: &[f64]) -> f64 {
    c.assign(x).1
}

/// `Σ_g γ(c, x_g) values[g] h^d`.
pub fn empirical_risk(c: &Codebook, field: &DensityField) -> f64 {
    let grid = &field.grid;
    let mut sum = 0.0;
    for (g, v) in field.values.iter().enumerate() {
        sum += kmeans_loss(c, grid.node(g)) * v;
    }
    sum * grid.cell_volume()
}

/// `γ_λ(c, z) = ∫_B K_λ(z − x) γ(c, x) dx` on the grid.
pub fn convolved_loss(
    c: &Codebook,
    z: &[f64],
    table: &DeconvKernelTable,
    grid: &GridDomain,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut diff = vec![0.0; z.len()];
    for g in 0..grid.len() {
        let x = grid.node(g);
        for (d, (zv, xv)) in diff.iter_mut().zip(z.iter().zip(x)) {
            *d = zv - xv;
        }
        sum += table.eval(&diff)? * kmeans_loss(c, x);
    }
    Ok(sum * grid.cell_volume())
}

/// `n^{-1} Σ_i γ_λ(c, Z_i)`: the empirical risk computed observation by observation.
pub fn empirical_risk_per_observation(
    c: &Codebook,
    sample: &Sample,
    table: &DeconvKernelTable,
    grid: &GridDomain,
) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..sample.n() {
        sum += convolved_loss(c, sample.point(i), table, grid)?;
    }
    Ok(sum / sample.n() as f64)
}

/// One Gaussian component of a mixture, before truncation to the unit ball.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

/// Known density of the uncorrupted data.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrueDensity {
    /// Isotropic Gaussian mixture restricted to the unit ball and renormalised.
    Mixture { components: Vec<Component> },
    /// Uniform law on the unit ball.
    Uniform { dim: usize },
}

impl TrueDensity {
    pub fn dim(&self) -> usize {
        match self {
            TrueDensity::Mixture { components } => components.first().map_or(0, |c| c.mean.len()),
            TrueDensity::Uniform { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrueDensity::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::config("mixture needs at least one component"));
                }
                let d = self.dim();
                let mut total = 0.0;
                for c in components {
                    if c.mean.len() != d || d == 0 {
                        return Err(Error::config("mixture components differ in dimension"));
                    }
                    if !(c.scale > 0.0 && c.weight > 0.0) {
                        return Err(Error::config("mixture scales and weights must be positive"));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
            TrueDensity::Uniform { dim } => {
                if *dim == 0 {
                    Err(Error::config("uniform law needs d ≥ 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Density before renormalisation (zero outside the ball).
    fn raw(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 > 1.0 {
            return 0.0;
        }
        match self {
            TrueDensity::Mixture { components } => components
                .iter()
                .map(|c| {
                    let d = c.mean.len() as i32;
                    let q = sq_dist(x, &c.mean) / (c.scale * c.scale);
                    c.weight * (-0.5 * q).exp()
                        / ((2.0 * std::f64::consts::PI).sqrt() * c.scale).powi(d)
                })
                .sum(),
            TrueDensity::Uniform { .. } => 1.0,
        }
    }

    /// Draws `n` points by rejection from the untruncated law.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut tries = 0usize;
        let mut x = vec![0.0; d];
        while out.len() < n * d {
            tries += 1;
            match self {
                TrueDensity::Mixture { components } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = components.len() - 1;
                    for (j, c) in components.iter().enumerate() {
                        acc += c.weight;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    let c = &components[pick];
                    for (xv, m) in x.iter_mut().zip(&c.mean) {
                        let e: f64 = StandardNormal.sample(rng);
                        *xv = m + c.scale * e;
                    }
                }
                TrueDensity::Uniform { .. } => {
                    for xv in x.iter_mut() {
                        *xv = rng.random_range(-1.0..1.0);
                    }
                }
            }
            if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                out.extend_from_slice(&x);
            }
            if tries >= 64 && (tries - out.len() / d) * 2 > tries {
                return Err(Error::config(
                    "rejection rate above 1/2: mixture mass too close to the ball boundary",
                ));
            }
        }
        Ok(out)
    }
}

/// A known data law with its oracle codebooks on a quadrature grid.
#[derive(Clone, Debug)]
pub struct TrueModel {
    pub density: TrueDensity,
    /// Declared smoothness `s`.
    pub smoothness: f64,
    /// Declared Hölder constant `L`.
    pub holder_l: f64,
    pub k: usize,
    pub grid: Arc<GridDomain>,
    /// The true density on `grid`.
    pub field: DensityField,
    /// Renormalisation constant (mass of the untruncated law in the ball).
    pub normaliser: f64,
    /// Distinct (up to relabeling) minimizers of the true risk.
    pub oracle_codebooks: Vec<Codebook>,
    pub oracle_risk: f64,
}

impl TrueModel {
    pub fn new(
        density: TrueDensity,
        k: usize,
        grid: Arc<GridDomain>,
        smoothness: f64,
        holder_l: f64,
    ) -> Result<Self> {
        density.validate()?;
        if density.dim() != grid.dim() {
            return Err(Error::config("model and grid dimensions differ"));
        }
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let normaliser = ball_mass(&density);
        let raw = DensityField::from_fn(Arc::clone(&grid), 0.0, |x| density.raw(x));
        let field = raw.scaled(1.0 / normaliser);
        let (oracle_codebooks, oracle_risk) = find_oracles(&field, k)?;
        Ok(TrueModel {
            density,
            smoothness,
            holder_l,
            k,
            grid,
            field,
            normaliser,
            oracle_codebooks,
            oracle_risk,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `f(x)`.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.density.raw(x) / self.normaliser
    }

    /// Nearest oracle to `c` and its squared distance (up to relabeling).
    pub fn nearest_oracle(&self, c: &Codebook) -> (usize, f64) {
        self.oracle_codebooks
            .iter()
            .enumerate()
            .map(|(i, o)| (i, c.distance_sq(o)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    /// True density on another grid.
    pub fn field_on(&self, grid: &Arc<GridDomain>) -> DensityField {
        if Arc::ptr_eq(grid, &self.grid) || **grid == *self.grid {
            return self.field.clone();
        }
        DensityField::from_fn(Arc::clone(grid), 0.0, |x| self.pdf(x))
    }
}

/// Mass of the untruncated law inside the unit ball, by fine midpoint quadrature.
fn ball_mass(density: &TrueDensity) -> f64 {
    match density {
        TrueDensity::Uniform { dim } => {
            crate::quad::unit_ball_volume(*dim)
        }
        TrueDensity::Mixture { .. } => {
            let d = density.dim();
            let p = match d {
                1 => 200_000,
                2 => 2_000,
                _ => 100,
            };
            let grid = GridDomain::ball(d, 1.0, p).expect("fixed grid is valid");
            let h = grid.cell_volume();
            (0..grid.len()).map(|g| density.raw(grid.node(g))).sum::<f64>() * h
        }
    }
}

fn find_oracles(field: &DensityField, k: usize) -> Result<(Vec<Codebook>, f64)> {
    let grid = &field.grid;
    let cfg = MinimizeConfig {
        restarts: 32,
        max_iters: 1000,
        tol: 1e-14,
        seed: 0x5eed,
        projection: true,
    };
    let mut candidates = Vec::new();
    let mut rng = rng_from(cfg.seed);
    for _ in 0..cfg.restarts {
        let init = seed_codebook(field, k, &mut rng);
        candidates.push(lloyd(field, init, &cfg).best);
    }
    // coarse lattice search, refined by Lloyd
    let per_axis = match grid.dim() {
        1 => 64,
        2 => 12,
        _ => 4,
    };
    let lattice_grid = GridDomain::ball(grid.dim(), 1.0, per_axis)?;
    let lattice: Vec<Vec<f64>> = (0..lattice_grid.len())
        .map(|g| lattice_grid.node(g).to_vec())
        .collect();
    if (lattice.len() as f64).powi(k as i32) <= 1e6 {
        let coarse = brute_force_min(field, k, &lattice)?;
        candidates.push(lloyd(field, coarse.codebook, &cfg).best);
    }
    let scored: Vec<(f64, Codebook)> = candidates
        .into_iter()
        .map(|c| (empirical_risk(&c, field), c.sorted()))
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Numerical {
            lambda: 0.0,
            reason: "oracle search produced a non-finite risk".into(),
        });
    }
    let mut ordered = scored;
    ordered.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut oracles: Vec<Codebook> = Vec::new();
    for (r, c) in ordered {
        if r <= best + 1e-4 && oracles.iter().all(|o| o.distance_sq(&c).sqrt() > 1e-2) {
            oracles.push(c);
        }
    }
    Ok((oracles, best))
}

/// `R(c) = Σ_g γ(c, x_g) f(x_g) h^d`.
pub fn true_risk(c: &Codebook, model: &TrueModel, grid: &Arc<GridDomain>) -> f64 {
    empirical_risk(c, &model.field_on(grid))
}

/// `R(c) − R(c*)`; errors when negative beyond the quadrature tolerance.
pub fn excess_risk(c: &Codebook, model: &TrueModel, grid: &Arc<GridDomain>) -> Result<f64> {
    let e = true_risk(c, model, grid) - model.oracle_risk;
    if e < -EXCESS_TOLERANCE {
        return Err(Error::OracleNotOptimal { excess: e });
    }
    Ok(e)
}

/// Result of the margin probe.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginProbe {
    /// `κ̂ = max ‖c − c*(c)‖² / (R(c) − R(c*))`.
    pub kappa: f64,
    pub probes_used: usize,
    pub skipped: usize,
    /// True when `κ̂` is so large that the margin condition is doubtful.
    pub flagged: bool,
}

/// Threshold above which a probed margin constant is flagged.
pub const KAPPA_FLAG: f64 = 1e3;

/// Estimates the margin constant from `n_probe` codebooks, half drawn uniformly
/// in the ball and half as Gaussian perturbations of the oracles.
pub fn probe_margin(
    model: &TrueModel,
    grid: &Arc<GridDomain>,
    n_probe: usize,
    seed: u64,
) -> Result<MarginProbe> {
    if model.oracle_codebooks.is_empty() {
        return Err(Error::config("model has no oracle codebook"));
    }
    let d = model.dim();
    let k = model.k;
    let field = model.field_on(grid);
    let mut rng = rng_from(derive_seed(seed, &[0x6d61_7267]));
    let mut kappa: f64 = 0.0;
    let (mut used, mut skipped) = (0, 0);
    for p in 0..n_probe {
        let centers: Vec<f64> = if p % 2 == 0 {
            (0..k).flat_map(|_| uniform_in_ball(&mut rng, d)).collect()
        } else {
            let o = &model.oracle_codebooks[rng.random_range(0..model.oracle_codebooks.len())];
            let spread = 10f64.powf(rng.random_range(-3.0..-0.5));
            let mut c: Vec<f64> = o
                .flat()
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + spread * e
                })
                .collect();
            for j in 0..k {
                project_to_ball(&mut c[j * d..(j + 1) * d]);
            }
            c
        };
        let c = Codebook::from_flat_unchecked(d, centers);
        let excess = empirical_risk(&c, &field) - model.oracle_risk;
        if excess < 1e-10 {
            skipped += 1;
            continue;
        }
        let (_, dist) = model.nearest_oracle(&c);
        kappa = kappa.max(dist / excess);
        used += 1;
    }
    Ok(MarginProbe {
        kappa,
        probes_used: used,
        skipped,
        flagged: kappa > KAPPA_FLAG,
    })
}

pub(crate) fn uniform_in_ball<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return x;
        }
    }
}

pub(crate) fn project_to_ball(c: &mut [f64]) {
    let r = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r > 1.0 {
        for v in c.iter_mut() {
            *v /= r;
        }
    }
}
