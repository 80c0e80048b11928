//! Forward Fokker-Planck evolution of the node population over (wealth, price).
//!
//! The population is a density `m` on `x > 0` plus a measure `eta` on the
//! zero-wealth line, where nodes have stopped mining. Internally the solver
//! works with node masses (`m * dx * db` in the interior, `eta * db` on the
//! line) and applies the transpose of the HJB generator, so the scheme is the
//! exact discrete adjoint of the backward solver and conserves mass to
//! rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{jump_shift, Grid2D, ScalarField};
use crate::hjb::{self, HjbParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    /// Density on `x > 0`; row 0 is always zero.
    pub interior: ScalarField,
    /// Density along the zero-wealth line, one value per price node.
    pub eta: Vec<f64>,
}

impl DensityState {
    pub fn new(interior: ScalarField, eta: Vec<f64>) -> Result<Self> {
        let g = *interior.grid();
        if eta.len() != g.ny {
            return Err(Error::domain(format!("eta has {} entries, grid has {} prices", eta.len(), g.ny)));
        }
        if interior.row(0).iter().any(|&v| v != 0.0) {
            return Err(Error::domain("interior density must vanish on the zero-wealth row"));
        }
        if interior.values().iter().chain(&eta).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("densities must be finite and nonnegative"));
        }
        Ok(Self { interior, eta })
    }

    pub fn grid(&self) -> &Grid2D {
        self.interior.grid()
    }

    /// Builds a state from node masses (zero-wealth row first).
    pub fn from_masses(g: Grid2D, masses: &[f64]) -> Self {
        let area = g.cell_area();
        let mut interior = vec![0.0; g.len()];
        for (k, (d, &m)) in interior.iter_mut().zip(masses).enumerate() {
            if k >= g.ny {
                *d = m / area;
            }
        }
        let eta = masses[..g.ny].iter().map(|m| m / g.db).collect();
        Self { interior: ScalarField::from_values(g, interior).expect("grid sized"), eta }
    }

    pub fn masses(&self) -> Vec<f64> {
        let g = *self.grid();
        let area = g.cell_area();
        let mut out: Vec<f64> = self.interior.values().iter().map(|d| d * area).collect();
        for (o, e) in out.iter_mut().zip(&self.eta) {
            *o = e * g.db;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.interior.integrate() + self.eta_mass()
    }

    pub fn eta_mass(&self) -> f64 {
        self.eta.iter().sum::<f64>() * self.grid().db
    }

    /// Unit mass spread evenly over all interior nodes.
    pub fn uniform_interior(g: Grid2D) -> Self {
        let n = ((g.nx - 1) * g.ny) as f64;
        let mut masses = vec![1.0 / n; g.len()];
        masses[..g.ny].iter_mut().for_each(|m| *m = 0.0);
        Self::from_masses(g, &masses)
    }

    /// Unit mass at a single node.
    pub fn point_mass(g: Grid2D, i: usize, j: usize) -> Self {
        let mut masses = vec![0.0; g.len()];
        masses[g.idx(i, j)] = 1.0;
        Self::from_masses(g, &masses)
    }

    /// Exponential wealth profile `exp(-x / dx) / dx` concentrated on the
    /// `b = 0` column. The node at `x = 0` lies on the zero-wealth line, so
    /// its share goes to `eta`.
    pub fn exponential_wealth(g: Grid2D) -> Self {
        let weights: Vec<f64> = (0..g.nx).map(|i| (-(i as f64)).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut masses = vec![0.0; g.len()];
        for (i, w) in weights.iter().enumerate() {
            masses[g.idx(i, 0)] = w / total;
        }
        Self::from_masses(g, &masses)
    }
}

/// Mass per wealth index; index 0 is the zero-wealth line.
pub fn wealth_marginal(state: &DensityState) -> Vec<f64> {
    let g = *state.grid();
    let masses = state.masses();
    masses.chunks(g.ny).map(|row| row.iter().sum()).collect()
}

/// Mass per price index.
pub fn price_marginal(state: &DensityState) -> Vec<f64> {
    let g = *state.grid();
    let masses = state.masses();
    (0..g.ny).map(|j| (0..g.nx).map(|i| masses[g.idx(i, j)]).sum()).collect()
}

#[inline]
fn control_at(alpha: &ScalarField, i: usize, j: usize) -> f64 {
    if i == 0 {
        0.0
    } else {
        alpha.get(i, j)
    }
}

/// Wealth node receiving the lower share of a jump from `i`, and that share's
/// complement; everything past the top row lands on it.
#[inline]
fn jump_destination(i: usize, whole: usize, frac: f64, nx: usize) -> (usize, f64) {
    let lo = i + whole;
    if lo >= nx - 1 {
        (nx - 1, 0.0)
    } else {
        (lo, frac)
    }
}

/// Scatters `scale * (G_x + G_J)^T mass` into `out`; the jump loss at the
/// source is skipped unless `with_loss` is set.
fn scatter_explicit(mass: &[f64], alpha: &ScalarField, p: &HjbParams, scale: f64, with_loss: bool, out: &mut [f64]) {
    let g = *alpha.grid();
    for j in 0..g.ny {
        let (whole, frac) = jump_shift(j, p.k, &g);
        for i in 1..g.nx {
            let m = mass[g.idx(i, j)];
            if m == 0.0 {
                continue;
            }
            let a = control_at(alpha, i, j);
            let (up, down) = hjb::wealth_rates(&g, &p.market, i, a);
            let src = g.idx(i, j);
            if up > 0.0 {
                let f = scale * up * m;
                out[src] -= f;
                out[g.idx(i + 1, j)] += f;
            }
            if down > 0.0 {
                let f = scale * down * m;
                out[src] -= f;
                out[g.idx(i - 1, j)] += f;
            }
            let rate = hjb::jump_rate(&g, p, i, j, a);
            if rate > 0.0 {
                let f = scale * rate * m;
                let (lo, share) = jump_destination(i, whole, frac, g.nx);
                if with_loss {
                    out[src] -= f;
                }
                out[g.idx(lo, j)] += f * (1.0 - share);
                if share > 0.0 {
                    out[g.idx(lo + 1, j)] += f * share;
                }
            }
        }
    }
}

/// Full adjoint generator `G^T` applied to node masses.
pub fn apply_adjoint(mass: &[f64], alpha: &ScalarField, p: &HjbParams) -> Vec<f64> {
    let g = *alpha.grid();
    let mut out = vec![0.0; g.len()];
    scatter_explicit(mass, alpha, p, 1.0, true, &mut out);
    let (up, down) = hjb::price_rates(&g, p);
    for i in 0..g.nx {
        for j in 0..g.ny {
            let m = mass[g.idx(i, j)];
            if j + 1 < g.ny {
                out[g.idx(i, j)] -= up[j] * m;
                out[g.idx(i, j + 1)] += up[j] * m;
            }
            if j > 0 {
                out[g.idx(i, j)] -= down[j] * m;
                out[g.idx(i, j - 1)] += down[j] * m;
            }
        }
    }
    out
}

/// Implicit update `(I + dt q a - dt G_b)^T m_new = m` row by row: price
/// moves and the jump loss.
fn implicit_update(mass: &mut [f64], alpha: &ScalarField, p: &HjbParams, dt: f64) -> Result<()> {
    let g = *alpha.grid();
    let (up, down) = hjb::price_rates(&g, p);
    let n = g.ny;
    let lower: Vec<f64> = (0..n).map(|j| if j > 0 { -dt * up[j - 1] } else { 0.0 }).collect();
    let upper: Vec<f64> = (0..n).map(|j| if j + 1 < n { -dt * down[j + 1] } else { 0.0 }).collect();
    mass.par_chunks_mut(n).with_min_len(hjb::ROWS_PER_TASK).enumerate().try_for_each(|(i, row)| {
        let diag: Vec<f64> =
            (0..n).map(|j| 1.0 + dt * (up[j] + down[j] + hjb::jump_rate(&g, p, i, j, alpha.get(i, j)))).collect();
        crate::grid::Tridiagonal::new(&lower, &diag, &upper)?.solve_in_place(row);
        Ok(())
    })
}

fn step_masses(mass: &[f64], alpha: &ScalarField, p: &HjbParams, dt: f64) -> Result<Vec<f64>> {
    let mut implicit = mass.to_vec();
    implicit_update(&mut implicit, alpha, p, dt)?;
    let mut out = implicit.clone();
    scatter_explicit(&implicit, alpha, p, dt, false, &mut out);
    for v in out.iter_mut() {
        // rounding in the scatter can leave -1e-30 where a node empties exactly
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FP step".into()));
    }
    Ok(out)
}

/// One forward step of size `p.dt`; errors if it breaks the explicit bound.
pub fn fp_forward_step(state: &DensityState, alpha: &ScalarField, p: &HjbParams) -> Result<DensityState> {
    p.validate()?;
    let max_dt = hjb::max_stable_dt(alpha, p);
    if p.dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: p.dt, max_dt });
    }
    let g = *state.grid();
    Ok(DensityState::from_masses(g, &step_masses(&state.masses(), alpha, p, p.dt)?))
}

/// Evolves over `span` with a frozen control, using equal substeps small
/// enough for the explicit part. Returns the substep count.
pub fn evolve(state: &DensityState, alpha: &ScalarField, p: &HjbParams, span: f64) -> Result<(DensityState, usize)> {
    p.validate()?;
    let max_dt = 0.9 * hjb::max_stable_dt(alpha, p);
    let n = if max_dt.is_finite() { (span / max_dt).ceil().max(1.0) as usize } else { 1 };
    let dt = span / n as f64;
    let mut mass = state.masses();
    for _ in 0..n {
        mass = step_masses(&mass, alpha, p, dt)?;
    }
    Ok((DensityState::from_masses(*state.grid(), &mass), n))
}

#[derive(Debug, Clone)]
pub struct StationaryFp {
    pub state: DensityState,
    pub iterations: usize,
    /// Max-norm change of node masses per iteration.
    pub residuals: Vec<f64>,
    /// Largest `|factor - 1|` among per-step renormalizations.
    pub max_renormalization: f64,
}

/// Tolerated per-step mass drift before renormalization is treated as a bug.
pub const RENORMALIZATION_LIMIT: f64 = 1e-8;

/// Long-run density under a fixed control, by pseudo-time stepping from
/// `initial` (or the uniform interior) until node masses stop changing.
pub fn solve_stationary_fp(alpha: &ScalarField, p: &HjbParams, initial: Option<&DensityState>) -> Result<StationaryFp> {
    p.validate()?;
    let g = *alpha.grid();
    let mut mass = match initial {
        Some(s) => s.masses(),
        None => DensityState::uniform_interior(g).masses(),
    };
    let dt = p.dt.min(0.9 * hjb::max_stable_dt(alpha, p));
    let mut residuals = Vec::new();
    let mut worst: f64 = 0.0;
    for it in 1..=p.max_iter {
        let mut next = step_masses(&mass, alpha, p, dt)?;
        let total: f64 = next.iter().sum();
        let factor = 1.0 / total;
        if (factor - 1.0).abs() > RENORMALIZATION_LIMIT {
            return Err(Error::MassDrift(factor - 1.0));
        }
        worst = worst.max((factor - 1.0).abs());
        next.iter_mut().for_each(|m| *m *= factor);
        let res = next.iter().zip(&mass).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        residuals.push(res);
        mass = next;
        if res < p.tol {
            return Ok(StationaryFp {
                state: DensityState::from_masses(g, &mass),
                iterations: it,
                residuals,
                max_renormalization: worst,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "stationary FP",
        iterations: p.max_iter,
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}
