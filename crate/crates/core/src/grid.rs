//! Uniform wealth x price grid, scalar fields on it, and the small pieces of
//! numerical plumbing shared by the HJB and FP solvers.
//!
//! Fields are stored wealth-major: `values[i * ny + j]` is the node at
//! wealth `i * dx` and price `j * db`. Row `i = 0` is the zero-wealth line.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub db: f64,
}

impl Default for Grid2D {
    fn default() -> Self {
        Self { nx: 200, ny: 220, dx: 5e13, db: 4.6e13 }
    }
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, dx: f64, db: f64) -> Result<Self> {
        let g = Self { nx, ny, dx, db };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Config(format!("grid needs at least 3 points per axis, got {} x {}", self.nx, self.ny)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite() && self.db > 0.0 && self.db.is_finite()) {
            return Err(Error::Config("grid spacings must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    #[inline]
    pub fn b(&self, j: usize) -> f64 {
        j as f64 * self.db
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn b_max(&self) -> f64 {
        self.b(self.ny - 1)
    }

    /// Area element of interior cells.
    pub fn cell_area(&self) -> f64 {
        self.dx * self.db
    }

    /// Quadrature weight of node `(i, _)`: the zero-wealth line is a 1-D
    /// measure and carries only `db`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.db
        } else {
            self.dx * self.db
        }
    }

    /// Nearest node to a point, clamped into the grid.
    pub fn nearest(&self, x: f64, b: f64) -> (usize, usize) {
        let i = (x / self.dx).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = (b / self.db).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }
}

/// Locates `t / h` on `0..n` for linear interpolation, clamping outside.
#[inline]
fn bracket(t: f64, h: f64, n: usize) -> (usize, usize, f64) {
    let s = (t / h).clamp(0.0, (n - 1) as f64);
    let lo = (s.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, s - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                values.push(f(grid.x(i), grid.b(j)));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!("field has {} values, grid needs {}", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.grid.ny..(i + 1) * self.grid.ny]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear interpolation; coordinates outside the grid are clamped.
    pub fn interpolate(&self, x: f64, b: f64) -> f64 {
        let g = &self.grid;
        let (i0, i1, fx) = bracket(x, g.dx, g.nx);
        let (j0, j1, fb) = bracket(b, g.db, g.ny);
        let lo = (1.0 - fb) * self.get(i0, j0) + fb * self.get(i0, j1);
        let hi = (1.0 - fb) * self.get(i1, j0) + fb * self.get(i1, j1);
        (1.0 - fx) * lo + fx * hi
    }

    /// Cell-sum quadrature with the zero-wealth row weighted by `db` only.
    pub fn integrate(&self) -> f64 {
        let g = &self.grid;
        (0..g.nx).map(|i| g.weight(i) * self.row(i).iter().sum::<f64>()).sum()
    }

    /// Writes one row per wealth index; the header names each price column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.grid.ny).map(|j| format!("b_usd_per_token={:e}", self.grid.b(j))).collect();
        w.write_record(&header)?;
        for i in 0..self.grid.nx {
            w.write_record(self.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grid: Grid2D, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut values = Vec::with_capacity(grid.len());
        for rec in r.records() {
            for cell in rec?.iter() {
                let v: f64 =
                    cell.trim().parse().map_err(|_| Error::domain(format!("bad number in field csv: {cell:?}")))?;
                values.push(v);
            }
        }
        Self::from_values(grid, values)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(grid: Grid2D, path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(grid, std::io::BufReader::new(f))
    }

    /// JSON envelope with grid metadata and row-major values.
    pub fn to_json(&self, name: &str) -> serde_json::Value {
        let rows: Vec<&[f64]> = (0..self.grid.nx).map(|i| self.row(i)).collect();
        serde_json::json!({
            "name": name,
            "grid": self.grid,
            "layout": "rows are wealth indices, columns are price indices",
            "values": rows,
        })
    }
}

/// Pre-jump wealth sources feeding node `(i, j)` after a jump of `k * b_j`.
///
/// Up to two wealth indices with weights summing to one; empty when the
/// pre-jump wealth `x_i - k * b_j` would be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpSources {
    entries: [(usize, f64); 2],
    len: usize,
}

impl JumpSources {
    pub fn as_slice(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Jump shift of price column `j` in wealth cells, split into whole cells and
/// the fractional remainder.
#[inline]
pub fn jump_shift(j: usize, k: f64, g: &Grid2D) -> (usize, f64) {
    let s = (k * g.b(j) / g.dx).max(0.0);
    let whole = s.floor();
    (whole as usize, s - whole)
}

pub fn jump_source_index(i: usize, j: usize, k: f64, g: &Grid2D) -> JumpSources {
    let (whole, frac) = jump_shift(j, k, g);
    let mut out = JumpSources { entries: [(0, 0.0); 2], len: 0 };
    if whole > i || (whole == i && frac > 0.0) {
        return out;
    }
    let near = i - whole;
    out.entries[0] = (near, 1.0 - frac);
    out.len = 1;
    if frac > 0.0 {
        out.entries[1] = (near - 1, frac);
        out.len = 2;
    }
    out
}

/// LU factors of a tridiagonal matrix, reused for many right-hand sides.
///
/// `lower[0]` and `upper[n-1]` are ignored. Assumes no pivoting is needed,
/// which holds for the diagonally dominant systems built by the solvers.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() != n || upper.len() != n || n == 0 {
            return Err(Error::LinearSolve("tridiagonal band lengths differ".into()));
        }
        let mut upper_mod = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for k in 0..n {
            let pivot = diag[k] - if k > 0 { lower[k] * prev } else { 0.0 };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::LinearSolve(format!("zero pivot at row {k}")));
            }
            inv_pivot[k] = 1.0 / pivot;
            prev = if k + 1 < n { upper[k] * inv_pivot[k] } else { 0.0 };
            upper_mod[k] = prev;
        }
        Ok(Self { lower: lower.to_vec(), upper_mod, inv_pivot })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for k in 1..n {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.inv_pivot[k];
        }
        for k in (0..n - 1).rev() {
            rhs[k] -= self.upper_mod[k] * rhs[k + 1];
        }
    }
}
