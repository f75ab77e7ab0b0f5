//! Quadrature grids, corrupted samples and the deconvolution density estimate.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::DeconvKernelTable;
use crate::quad::unit_ball_volume;

/// Midpoint grid on `[-half_width, half_width]^d`, optionally restricted to the
/// closed ball of radius `half_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    dim: usize,
    half_width: f64,
    points_per_axis: usize,
    ball: bool,
    axis: Vec<f64>,
    nodes: Vec<f64>,
    index: Vec<usize>,
}

impl GridDomain {
    /// Grid restricted to the ball `B(0, half_width)`.
    pub fn ball(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        Self::build(dim, half_width, points_per_axis, true)
    }

    /// Full cube grid.
    pub fn cube(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        Self::build(dim, half_width, points_per_axis, false)
    }

    /// Default quadrature grid on the unit ball: 512 nodes in 1-d, 128² in 2-d.
    pub fn default_for(dim: usize) -> Result<Self> {
        let p = match dim {
            1 => 512,
            2 => 128,
            _ => 32,
        };
        Self::ball(dim, 1.0, p)
    }

    fn build(dim: usize, half_width: f64, points_per_axis: usize, ball: bool) -> Result<Self> {
        if dim == 0 || points_per_axis == 0 {
            return Err(Error::config("grid needs d ≥ 1 and at least one point per axis"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::config("grid half width must be positive"));
        }
        let h = 2.0 * half_width / points_per_axis as f64;
        let axis: Vec<f64> = (0..points_per_axis)
            .map(|i| -half_width + (i as f64 + 0.5) * h)
            .collect();
        let total = points_per_axis.pow(dim as u32);
        let mut nodes = Vec::new();
        let mut index = Vec::new();
        let mut idx = vec![0usize; dim];
        for flat in 0..total {
            let mut r = flat;
            for slot in idx.iter_mut() {
                *slot = r % points_per_axis;
                r /= points_per_axis;
            }
            let norm2: f64 = idx.iter().map(|&i| axis[i] * axis[i]).sum();
            if ball && norm2 > half_width * half_width {
                continue;
            }
            nodes.extend(idx.iter().map(|&i| axis[i]));
            index.extend_from_slice(&idx);
        }
        Ok(GridDomain {
            dim,
            half_width,
            points_per_axis,
            ball,
            axis,
            nodes,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn is_ball(&self) -> bool {
        self.ball
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Coordinates of node `g`.
    #[inline]
    pub fn node(&self, g: usize) -> &[f64] {
        &self.nodes[g * self.dim..(g + 1) * self.dim]
    }

    /// Per-axis indices of node `g`.
    #[inline]
    pub fn node_index(&self, g: usize) -> &[usize] {
        &self.index[g * self.dim..(g + 1) * self.dim]
    }

    /// One-dimensional midpoints shared by every axis.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// Spacing `h` between midpoints.
    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.step().powi(self.dim as i32)
    }

    /// `𝒱(d)`, the volume of the unit ball.
    pub fn unit_ball_volume(&self) -> f64 {
        unit_ball_volume(self.dim)
    }

    /// Flat node coordinates, `len() × d`.
    pub fn nodes_flat(&self) -> &[f64] {
        &self.nodes
    }
}

/// Observations `Z_i = X_i + ε_i`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    dim: usize,
    z: Vec<f64>,
}

impl Sample {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("sample rows have inconsistent dimension"));
        }
        Self::from_flat(dim, rows.concat())
    }

    pub fn from_flat(dim: usize, z: Vec<f64>) -> Result<Self> {
        if dim == 0 || z.is_empty() || z.len() % dim != 0 {
            return Err(Error::config("sample needs n ≥ 1 observations of dimension d ≥ 1"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sample contains non-finite values"));
        }
        Ok(Sample { dim, z })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.z.len() / self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.z
    }

    /// `max_i max_v |Z_iv|`.
    pub fn max_abs(&self) -> f64 {
        self.z.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Concatenation of two samples of the same dimension.
    pub fn concat(&self, other: &Sample) -> Result<Sample> {
        if self.dim != other.dim {
            return Err(Error::config("cannot concatenate samples of different dimension"));
        }
        let mut z = self.z.clone();
        z.extend_from_slice(&other.z);
        Sample::from_flat(self.dim, z)
    }
}

/// Density values on the nodes of a grid (possibly negative).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub grid: Arc<GridDomain>,
    pub values: Vec<f64>,
    pub lambda: f64,
}

impl DensityField {
    /// Evaluates a known density on the grid (`lambda` is informational).
    pub fn from_fn(grid: Arc<GridDomain>, lambda: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|g| f(grid.node(g))).collect();
        DensityField {
            grid,
            values,
            lambda,
        }
    }

    /// `Σ_g values[g] h^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Quadrature weights `w_g = values[g] h^d`.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.grid.cell_volume();
        self.values.iter().map(|v| v * h).collect()
    }

    pub fn scaled(&self, factor: f64) -> DensityField {
        DensityField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * factor).collect(),
            lambda: self.lambda,
        }
    }

    /// Writes `x1,…,xd,value` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|v| format!("x{v}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (g, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.node(g).iter().map(|x| format!("{x}")).collect();
            row.push(format!("{v}"));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// `f̂_λ(x_g) = n^{-1} Σ_i K_λ(Z_i − x_g)` on every grid node.
///
/// Kernel values are multilinear interpolants of the per-axis tables. The sum
/// runs over observations in order, so the result does not depend on threading.
pub fn estimate_density(
    sample: &Sample,
    table: &DeconvKernelTable,
    grid: &Arc<GridDomain>,
) -> Result<DensityField> {
    let d = grid.dim();
    if sample.dim() != d || table.dim() != d {
        return Err(Error::config(format!(
            "dimension mismatch: sample {}, table {}, grid {}",
            sample.dim(),
            table.dim(),
            d
        )));
    }
    let axis = grid.axis();
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    for i in 0..sample.n() {
        let z = sample.point(i);
        for (v, at) in table.axes.iter().enumerate() {
            let worst = (z[v] - lo).abs().max((z[v] - hi).abs());
            if worst > at.range {
                return Err(Error::Range {
                    lambda: table.lambda,
                    offset: worst,
                    range: at.range,
                });
            }
        }
    }
    let acc = match binned_1d(sample, table, grid) {
        Some(acc) => acc,
        None => direct_sum(sample, table, grid),
    };
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            lambda: table.lambda,
            reason: "non-finite density value".into(),
        });
    }
    Ok(DensityField {
        grid: Arc::clone(grid),
        values: acc,
        lambda: table.lambda,
    })
}

/// Direct evaluation; offsets must already be known to lie inside the table.
fn direct_sum(sample: &Sample, table: &DeconvKernelTable, grid: &GridDomain) -> Vec<f64> {
    let d = grid.dim();
    let axis = grid.axis();
    let p = axis.len();
    let mut acc = vec![0.0; grid.len()];
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; p]; d];
    for i in 0..sample.n() {
        let z = sample.point(i);
        for v in 0..d {
            let at = &table.axes[v];
            for (slot, &x) in rows[v].iter_mut().zip(axis) {
                *slot = at.eval(z[v] - x).unwrap_or(0.0);
            }
        }
        if d == 1 {
            for (a, k) in acc.iter_mut().zip(&rows[0]) {
                *a += k;
            }
        } else {
            for (g, a) in acc.iter_mut().enumerate() {
                let idx = grid.node_index(g);
                let mut prod = 1.0;
                for v in 0..d {
                    prod *= rows[v][idx[v]];
                }
                *a += prod;
            }
        }
    }
    let inv_n = 1.0 / sample.n() as f64;
    for a in acc.iter_mut() {
        *a *= inv_n;
    }
    acc
}

/// One-dimensional evaluation through linear binning on the table lattice.
///
/// When the table step divides the grid spacing, the interpolation fraction
/// of `Z_i − x_g` does not depend on `g`, so the interpolated sum equals a
/// correlation of the binned sample with the table. Returns `None` when the
/// table is not aligned or the direct sum is cheaper.
fn binned_1d(sample: &Sample, table: &DeconvKernelTable, grid: &GridDomain) -> Option<Vec<f64>> {
    if grid.dim() != 1 {
        return None;
    }
    let at = &table.axes[0];
    let ratio = grid.step() / at.step;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * m {
        return None;
    }
    let m = m as usize;
    let x0 = grid.axis()[0];
    let last = at.values.len() - 1;
    let positions: Vec<f64> = sample
        .flat()
        .iter()
        .map(|z| (z - x0 + at.range) / at.step)
        .collect();
    let lo = positions.iter().fold(f64::INFINITY, |a, &b| a.min(b)).floor() as usize;
    let hi = positions.iter().fold(0.0f64, |a, &b| a.max(b)).floor() as usize + 1;
    let span = hi - lo + 1;
    if span >= sample.n() {
        return None;
    }
    let mut bins = vec![0.0; span];
    for &pos in &positions {
        let j = pos.floor();
        let frac = pos - j;
        let j = j as usize - lo;
        bins[j] += 1.0 - frac;
        bins[j + 1] += frac;
    }
    let inv_n = 1.0 / sample.n() as f64;
    let acc = (0..grid.len())
        .map(|g| {
            let shift = g * m;
            let mut sum = 0.0;
            for (b, w) in bins.iter().enumerate() {
                let j = lo + b;
                if j >= shift && j - shift <= last {
                    sum += w * at.values[j - shift];
                }
            }
            sum * inv_n
        })
        .collect();
    Some(acc)
}
