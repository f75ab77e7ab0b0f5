//! Minimization of the empirical risk over codebooks: weighted Lloyd with
//! signed weights and restarts, and an exhaustive lattice search.

use rand::Rng;
use rayon::prelude::*;

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::risk::{empirical_risk, project_to_ball, sq_dist, uniform_in_ball, Codebook};
use crate::rng::{derive_seed, rng_from};

/// Cells with total weight at or below this keep their center.
pub const MASS_GUARD: f64 = 1e-12;

/// Largest number of k-tuples the exhaustive search will visit.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when the relative change of the risk falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Project updated centers radially onto the unit ball.
    pub projection: bool,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            restarts: 16,
            max_iters: 200,
            tol: 1e-9,
            seed: 0,
            projection: true,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::config("minimizer needs restarts ≥ 1, max_iters ≥ 1 and tol > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeResult {
    pub codebook: Codebook,
    /// Empirical risk at `codebook`.
    pub risk: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

/// Outcome of one Lloyd run.
#[derive(Clone, Debug)]
pub struct LloydRun {
    /// Lowest-risk iterate, including the starting codebook.
    pub best: Codebook,
    pub best_risk: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Risk of each visited codebook, starting with the initial one.
    pub trace: Vec<f64>,
}

/// Weighted Lloyd iterations from `init` on the signed weights of `field`.
pub fn lloyd(field: &DensityField, init: Codebook, cfg: &MinimizeConfig) -> LloydRun {
    let grid = &field.grid;
    let d = grid.dim();
    let k = init.k();
    let h = grid.cell_volume();
    let weights: Vec<f64> = field.values.iter().map(|v| v * h).collect();
    let mut cur = init.flat().to_vec();
    let mut best = cur.clone();
    let mut best_risk = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut sums = vec![0.0; k * d];
    let mut mass = vec![0.0; k];
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        sums.iter_mut().for_each(|s| *s = 0.0);
        mass.iter_mut().for_each(|m| *m = 0.0);
        let mut risk = 0.0;
        for (g, &w) in weights.iter().enumerate() {
            let x = grid.node(g);
            let mut j_best = 0;
            let mut d_best = f64::INFINITY;
            for j in 0..k {
                let dist = sq_dist(&cur[j * d..(j + 1) * d], x);
                if dist < d_best {
                    d_best = dist;
                    j_best = j;
                }
            }
            risk += w * d_best;
            mass[j_best] += w;
            for v in 0..d {
                sums[j_best * d + v] += w * x[v];
            }
        }
        if !risk.is_finite() {
            break;
        }
        let prev = trace.last().copied();
        trace.push(risk);
        if risk < best_risk {
            best_risk = risk;
            best.copy_from_slice(&cur);
        }
        if let Some(p) = prev {
            if (p - risk).abs() <= cfg.tol * risk.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        let mut next = cur.clone();
        for j in 0..k {
            if mass[j] > MASS_GUARD {
                for v in 0..d {
                    next[j * d + v] = sums[j * d + v] / mass[j];
                }
                if cfg.projection {
                    project_to_ball(&mut next[j * d..(j + 1) * d]);
                }
            }
        }
        if next == cur {
            converged = true;
            break;
        }
        cur = next;
    }
    LloydRun {
        best: Codebook::from_flat_unchecked(d, best),
        best_risk,
        iterations,
        converged,
        trace,
    }
}

/// Weighted k-means++ seeding on the positive part of the field; uniform
/// centers in the ball when the field has no positive mass.
pub fn seed_codebook<R: Rng>(field: &DensityField, k: usize, rng: &mut R) -> Codebook {
    let grid = &field.grid;
    let d = grid.dim();
    let pos: Vec<f64> = field.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = pos.iter().sum();
    if !(total > 0.0) {
        let c = (0..k).flat_map(|_| uniform_in_ball(rng, d)).collect();
        return Codebook::from_flat_unchecked(d, c);
    }
    let pick = |rng: &mut R, w: &[f64], total: f64| -> usize {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (g, wg) in w.iter().enumerate() {
            acc += wg;
            if u < acc {
                return g;
            }
        }
        w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
    };
    let mut centers = Vec::with_capacity(k * d);
    let first = pick(rng, &pos, total);
    centers.extend_from_slice(grid.node(first));
    let mut dist: Vec<f64> = (0..grid.len())
        .map(|g| sq_dist(grid.node(g), &centers[..d]))
        .collect();
    for j in 1..k {
        let w: Vec<f64> = pos.iter().zip(&dist).map(|(p, q)| p * q).collect();
        let tw: f64 = w.iter().sum();
        let g = if tw > 0.0 { pick(rng, &w, tw) } else { pick(rng, &pos, total) };
        centers.extend_from_slice(grid.node(g));
        let c = &centers[j * d..(j + 1) * d];
        for (gi, dg) in dist.iter_mut().enumerate() {
            *dg = dg.min(sq_dist(grid.node(gi), c));
        }
    }
    Codebook::from_flat_unchecked(d, centers)
}

/// Approximates `argmin_c R_n^λ(c)` by the best of `cfg.restarts` Lloyd runs.
pub fn minimize(field: &DensityField, k: usize, cfg: &MinimizeConfig) -> Result<MinimizeResult> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let runs: Vec<LloydRun> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(derive_seed(cfg.seed, &[r as u64]));
            let init = seed_codebook(field, k, &mut rng);
            lloyd(field, init, cfg)
        })
        .collect();
    let mut chosen: Option<&LloydRun> = None;
    for run in &runs {
        if run.best_risk.is_finite() && chosen.is_none_or(|c| run.best_risk < c.best_risk) {
            chosen = Some(run);
        }
    }
    let run = chosen.ok_or_else(|| Error::Numerical {
        lambda: field.lambda,
        reason: "every Lloyd restart produced a non-finite risk".into(),
    })?;
    Ok(MinimizeResult {
        risk: empirical_risk(&run.best, field),
        codebook: run.best.clone(),
        iterations: run.iterations,
        restarts_used: cfg.restarts,
        converged: run.converged,
    })
}

/// Exhaustive minimum of the empirical risk over k-tuples of lattice points.
///
/// The risk is invariant under relabeling, so only non-decreasing index tuples
/// are visited; the first minimum in lexicographic order is returned.
pub fn brute_force_min(
    field: &DensityField,
    k: usize,
    lattice: &[Vec<f64>],
) -> Result<MinimizeResult> {
    let grid = &field.grid;
    let d = grid.dim();
    let l = lattice.len();
    if k == 0 || l == 0 {
        return Err(Error::config("brute force needs k ≥ 1 and a non-empty lattice"));
    }
    if lattice.iter().any(|p| p.len() != d) {
        return Err(Error::config("lattice dimension differs from the field"));
    }
    let combos = (l as f64).powi(k as i32);
    if combos > BRUTE_FORCE_LIMIT as f64 {
        return Err(Error::Guard {
            candidates: l,
            k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    // validates the ball constraint for every lattice point
    Codebook::new(lattice)?;
    let h = grid.cell_volume();
    let dist: Vec<Vec<f64>> = lattice
        .iter()
        .map(|p| (0..grid.len()).map(|g| sq_dist(p, grid.node(g))).collect())
        .collect();
    let mut idx = vec![0usize; k];
    let mut best_idx = idx.clone();
    let mut best = f64::INFINITY;
    let mut mins = vec![0.0; grid.len()];
    loop {
        mins.copy_from_slice(&dist[idx[0]]);
        for &i in &idx[1..] {
            for (m, dv) in mins.iter_mut().zip(&dist[i]) {
                if *dv < *m {
                    *m = *dv;
                }
            }
        }
        let risk: f64 = mins.iter().zip(&field.values).map(|(m, v)| m * v).sum::<f64>() * h;
        if risk < best {
            best = risk;
            best_idx.copy_from_slice(&idx);
        }
        // next non-decreasing tuple
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == l - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        let v = idx[pos - 1];
        for slot in idx[pos..].iter_mut() {
            *slot = v;
        }
    }
    let centers: Vec<f64> = best_idx.iter().flat_map(|&i| lattice[i].clone()).collect();
    let codebook = Codebook::from_flat_unchecked(d, centers);
    Ok(MinimizeResult {
        risk: empirical_risk(&codebook, field),
        codebook,
        iterations: 0,
        restarts_used: 0,
        converged: true,
    })
}
