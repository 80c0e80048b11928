//! Backward Hamilton-Jacobi-Bellman solver for a single node's value
//! function `v(x, b)` and recovery of the optimal hashrate.
//!
//! The discrete generator `G` acting on `v` is a Markov-chain rate matrix on
//! grid nodes:
//!
//! * wealth drift `r x - c a`, upwinded, with no transition off the top row
//!   and none out of the zero-wealth row, where the control is ignored
//!   (mining stops there);
//! * price drift `b_hat - b` upwinded plus diffusion `sigma^2 / 2`, with no
//!   flux through `b = 0` or `b = b_max`;
//! * reward jumps at rate `(lambda / h) a` to wealth `x + k b`, split
//!   linearly between the two bracketing nodes and clamped at `x_max`.
//!
//! A time step is backward Euler in the price part and in the jump loss
//! `-q a v`, and explicit in the wealth drift and the jump gain:
//! `((1 + r dt + dt q a) I - dt G_b) v = v_next + dt (u(a) + G_x v_next + q a v_next(x + k b))`
//! with `q = lambda / h`. Only the wealth drift limits the step size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, Tridiagonal};
use crate::market::MarketParams;

/// Rows handled per rayon task; small grids run on one thread.
pub(crate) const ROWS_PER_TASK: usize = 64;

/// Coefficients frozen over one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbParams {
    /// Block intensity, blocks per fortnight.
    pub lambda: f64,
    /// Tokens per block.
    pub k: f64,
    /// Total hashrate `M * alpha_bar`.
    pub h: f64,
    /// Price anchor of the mean-reverting token price.
    pub b_hat: f64,
    pub market: MarketParams,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl HjbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::domain(format!("total hashrate must be positive, got {}", self.h)));
        }
        if !(self.dt > 0.0) || !(self.tol > 0.0) {
            return Err(Error::domain("dt and tol must be positive"));
        }
        if !(self.lambda >= 0.0 && self.k >= 0.0 && self.b_hat >= 0.0) {
            return Err(Error::domain("lambda, k and b_hat must be nonnegative"));
        }
        Ok(())
    }

    /// Jump intensity per unit of hashrate, `lambda / h`.
    #[inline]
    pub fn jump_rate_per_hash(&self) -> f64 {
        self.lambda / self.h
    }
}

/// Wealth drift at node `(i, _)`; zero on the zero-wealth row.
#[inline]
pub fn wealth_drift(g: &Grid2D, mp: &MarketParams, i: usize, alpha: f64) -> f64 {
    if i == 0 {
        0.0
    } else {
        mp.discount * g.x(i) - mp.unit_cost * alpha
    }
}

/// Wealth-drift transition rates `(up, down)` out of node `(i, _)`.
#[inline]
pub fn wealth_rates(g: &Grid2D, mp: &MarketParams, i: usize, alpha: f64) -> (f64, f64) {
    let s = wealth_drift(g, mp, i, alpha);
    if s > 0.0 && i + 1 < g.nx {
        (s / g.dx, 0.0)
    } else if s < 0.0 {
        (0.0, -s / g.dx)
    } else {
        (0.0, 0.0)
    }
}

/// Price transition rates `(up, down)` for every price index; the same on
/// every wealth row.
pub fn price_rates(g: &Grid2D, p: &HjbParams) -> (Vec<f64>, Vec<f64>) {
    let diff = 0.5 * p.market.sigma * p.market.sigma / (g.db * g.db);
    let mut up = vec![0.0; g.ny];
    let mut down = vec![0.0; g.ny];
    for j in 0..g.ny {
        let d = p.b_hat - g.b(j);
        if j + 1 < g.ny {
            up[j] = d.max(0.0) / g.db + diff;
        }
        if j > 0 {
            down[j] = (-d).max(0.0) / g.db + diff;
        }
    }
    (up, down)
}

/// True when a jump from `(i, j)` lands back on the same node (zero price,
/// zero reward, or already on the top wealth row).
#[inline]
pub fn jump_is_self_loop(g: &Grid2D, i: usize, j: usize, k: f64) -> bool {
    i + 1 == g.nx || k * g.b(j) == 0.0
}

/// Jump rate out of node `(i, j)` under control `alpha`; zero on the
/// zero-wealth row and for self-loops.
#[inline]
pub fn jump_rate(g: &Grid2D, p: &HjbParams, i: usize, j: usize, alpha: f64) -> f64 {
    if i == 0 || jump_is_self_loop(g, i, j, p.k) {
        0.0
    } else {
        p.jump_rate_per_hash() * alpha
    }
}

/// Largest total rate of the explicit wealth-drift transitions. Steps are
/// monotone when `dt` times this is at most one.
pub fn explicit_rate_bound(alpha: &ScalarField, p: &HjbParams) -> f64 {
    let g = alpha.grid();
    let mut worst: f64 = 0.0;
    for i in 1..g.nx {
        for &a in alpha.row(i) {
            let (up, down) = wealth_rates(g, &p.market, i, a);
            worst = worst.max(up + down);
        }
    }
    worst
}

/// Largest stable explicit step for `alpha`.
pub fn max_stable_dt(alpha: &ScalarField, p: &HjbParams) -> f64 {
    let rate = explicit_rate_bound(alpha, p);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub alpha: ScalarField,
    /// Cells whose control denominator was nonpositive (value not increasing
    /// in wealth there); the control is set to zero at those cells.
    pub violations: Vec<Cell>,
}

#[inline]
fn control_for_slope(slope: f64, jump_gain: f64, mp: &MarketParams) -> Option<f64> {
    let denom = mp.unit_cost * (1.0 + slope) - jump_gain;
    if denom > 0.0 {
        Some((mp.theta1 / denom - mp.theta2).max(0.0))
    } else {
        None
    }
}

/// Closed-form maximizer of the Hamiltonian with the wealth derivative
/// upwinded by the sign of the drift it induces.
pub fn optimal_control(v: &ScalarField, p: &HjbParams) -> Control {
    let g = *v.grid();
    let mp = &p.market;
    let q = p.jump_rate_per_hash();
    let rows: Vec<(Vec<f64>, Vec<Cell>)> = (0..g.nx)
        .into_par_iter()
        .with_min_len(ROWS_PER_TASK)
        .map(|i| {
            let mut row = vec![0.0; g.ny];
            let mut bad = Vec::new();
            if i == 0 {
                return (row, bad);
            }
            let x = g.x(i);
            for (j, out) in row.iter_mut().enumerate() {
                let vij = v.get(i, j);
                let gain = if q > 0.0 && !jump_is_self_loop(&g, i, j, p.k) {
                    q * (v.interpolate(x + p.k * g.b(j), g.b(j)) - vij)
                } else {
                    0.0
                };
                let forward = if i + 1 < g.nx { (v.get(i + 1, j) - vij) / g.dx } else { 0.0 };
                let backward = (vij - v.get(i - 1, j)) / g.dx;
                let af = control_for_slope(forward, gain, mp);
                let ab = control_for_slope(backward, gain, mp);
                *out = match (af, ab) {
                    (Some(a), _) if mp.discount * x - mp.unit_cost * a > 0.0 => a,
                    (_, Some(a)) if mp.discount * x - mp.unit_cost * a < 0.0 => a,
                    (Some(_), Some(_)) => mp.discount * x / mp.unit_cost,
                    _ => {
                        bad.push((i, j));
                        0.0
                    }
                };
            }
            (row, bad)
        })
        .collect();
    let mut values = Vec::with_capacity(g.len());
    let mut violations = Vec::new();
    for (row, bad) in rows {
        values.extend(row);
        violations.extend(bad);
    }
    Control { alpha: ScalarField::from_values(g, values).expect("grid sized"), violations }
}

/// `G_x v` plus the jump term; the jump loss `-q a v` is included only when
/// `with_loss` is set.
fn explicit_generator(v: &ScalarField, alpha: &ScalarField, p: &HjbParams, with_loss: bool) -> Vec<f64> {
    let g = *v.grid();
    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(g.ny).with_min_len(ROWS_PER_TASK).enumerate().skip(1).for_each(|(i, row)| {
        for (j, o) in row.iter_mut().enumerate() {
            let a = alpha.get(i, j);
            let vij = v.get(i, j);
            let (up, down) = wealth_rates(&g, &p.market, i, a);
            let mut acc = 0.0;
            if up > 0.0 {
                acc += up * (v.get(i + 1, j) - vij);
            }
            if down > 0.0 {
                acc += down * (v.get(i - 1, j) - vij);
            }
            let rate = jump_rate(&g, p, i, j, a);
            if rate > 0.0 {
                let b = g.b(j);
                let loss = if with_loss { vij } else { 0.0 };
                acc += rate * (v.interpolate(g.x(i) + p.k * b, b) - loss);
            }
            *o = acc;
        }
    });
    out
}

/// Full generator `G v` for a fixed control field.
pub fn apply_generator(v: &ScalarField, alpha: &ScalarField, p: &HjbParams) -> ScalarField {
    let g = *v.grid();
    let mut out = explicit_generator(v, alpha, p, true);
    let (up, down) = price_rates(&g, p);
    for i in 0..g.nx {
        let row = v.row(i);
        for j in 0..g.ny {
            let mut acc = 0.0;
            if j + 1 < g.ny {
                acc += up[j] * (row[j + 1] - row[j]);
            }
            if j > 0 {
                acc += down[j] * (row[j - 1] - row[j]);
            }
            out[g.idx(i, j)] += acc;
        }
    }
    ScalarField::from_values(g, out).expect("grid sized")
}

/// Factorized `((1 + r dt + dt q a) I - dt G_b)` for wealth row `i`.
pub(crate) fn implicit_row_system(
    g: &Grid2D,
    p: &HjbParams,
    rates: &(Vec<f64>, Vec<f64>),
    alpha: &ScalarField,
    i: usize,
    dt: f64,
    discount: f64,
) -> Result<Tridiagonal> {
    let (up, down) = rates;
    let diag: Vec<f64> = (0..g.ny)
        .map(|j| 1.0 + discount * dt + dt * (up[j] + down[j] + jump_rate(g, p, i, j, alpha.get(i, j))))
        .collect();
    let lower: Vec<f64> = down.iter().map(|d| -dt * d).collect();
    let upper: Vec<f64> = up.iter().map(|u| -dt * u).collect();
    Tridiagonal::new(&lower, &diag, &upper)
}

fn check_finite(field: &ScalarField, what: &str) -> Result<()> {
    if field.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// One backward step of length `dt` with a frozen control and running payoff.
pub fn evaluate_policy_step(
    v_next: &ScalarField,
    alpha: &ScalarField,
    running: &ScalarField,
    p: &HjbParams,
    dt: f64,
) -> Result<ScalarField> {
    let g = *v_next.grid();
    let max_dt = max_stable_dt(alpha, p);
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, max_dt });
    }
    let explicit = explicit_generator(v_next, alpha, p, false);
    let mut rhs: Vec<f64> =
        v_next.values().iter().zip(running.values()).zip(&explicit).map(|((v, u), e)| v + dt * (u + e)).collect();
    let rates = price_rates(&g, p);
    rhs.par_chunks_mut(g.ny).with_min_len(ROWS_PER_TASK).enumerate().try_for_each(|(i, row)| {
        implicit_row_system(&g, p, &rates, alpha, i, dt, p.market.discount)?.solve_in_place(row);
        Ok::<(), Error>(())
    })?;
    let v = ScalarField::from_values(g, rhs)?;
    check_finite(&v, "HJB step")?;
    Ok(v)
}

/// Running utility `u(alpha)` at every node.
pub fn running_utility(alpha: &ScalarField, mp: &MarketParams) -> ScalarField {
    let values = alpha.values().iter().map(|&a| mp.utility_unchecked(a)).collect();
    ScalarField::from_values(*alpha.grid(), values).expect("grid sized")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbStep {
    pub value: ScalarField,
    pub control: Control,
}

/// One backward step of size `p.dt`: freeze the control from `v_next`,
/// solve for `v`, then refresh the control from `v`.
pub fn hjb_backward_step(v_next: &ScalarField, p: &HjbParams) -> Result<HjbStep> {
    p.validate()?;
    check_finite(v_next, "HJB terminal data")?;
    let frozen = optimal_control(v_next, p);
    let running = running_utility(&frozen.alpha, &p.market);
    let value = evaluate_policy_step(v_next, &frozen.alpha, &running, p, p.dt)?;
    let control = optimal_control(&value, p);
    Ok(HjbStep { value, control })
}

/// Backward over an interval of length `span`, subdividing whenever the
/// explicit wealth drift would be unstable.
pub fn backward_over(v_next: &ScalarField, p: &HjbParams, span: f64) -> Result<(HjbStep, usize)> {
    p.validate()?;
    let mut v = v_next.clone();
    let mut control = optimal_control(&v, p);
    let mut remaining = span;
    let mut substeps = 0;
    while remaining > 0.0 {
        let dt = remaining.min(0.9 * max_stable_dt(&control.alpha, p));
        let dt = if remaining - dt < 1e-12 * span { remaining } else { dt };
        let running = running_utility(&control.alpha, &p.market);
        v = evaluate_policy_step(&v, &control.alpha, &running, p, dt)?;
        control = optimal_control(&v, p);
        remaining -= dt;
        substeps += 1;
    }
    Ok((HjbStep { value: v, control }, substeps))
}

#[derive(Debug, Clone)]
pub struct StationaryHjb {
    pub value: ScalarField,
    pub control: Control,
    pub iterations: usize,
    /// Relative max-norm change per iteration.
    pub residuals: Vec<f64>,
}

/// Fixed point of the backward step: iterates in pseudo-time until the
/// max-norm change relative to `max(1, |v|)` drops below `p.tol`.
pub fn solve_stationary_hjb(g: Grid2D, p: &HjbParams, warm_start: Option<&ScalarField>) -> Result<StationaryHjb> {
    p.validate()?;
    let mut v = match warm_start {
        Some(w) if w.grid() == &g => w.clone(),
        _ => ScalarField::constant(g, p.market.utility_unchecked(p.market.static_maximizer()) / p.market.discount),
    };
    let mut control = optimal_control(&v, p);
    let mut residuals = Vec::new();
    for it in 1..=p.max_iter {
        let dt = p.dt.min(0.9 * max_stable_dt(&control.alpha, p));
        let running = running_utility(&control.alpha, &p.market);
        let next = evaluate_policy_step(&v, &control.alpha, &running, p, dt)?;
        let res = next.max_abs_diff(&v) / next.max_abs().max(1.0);
        residuals.push(res);
        v = next;
        control = optimal_control(&v, p);
        if res < p.tol {
            return Ok(StationaryHjb { value: v, control, iterations: it, residuals });
        }
    }
    Err(Error::NonConvergence {
        solver: "stationary HJB",
        iterations: p.max_iter,
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(market: MarketParams) -> HjbParams {
        HjbParams { lambda: 2016.0, k: 0.0, h: 1e27, b_hat: 0.0, market, dt: 10.0, tol: 1e-12, max_iter: 100_000 }
    }

    #[test]
    fn flat_value_gives_static_maximizer() {
        let g = Grid2D::new(10, 6, 5e13, 4.6e13).unwrap();
        let p = params(MarketParams::default());
        let c = optimal_control(&ScalarField::constant(g, 3.0), &p);
        let star = p.market.static_maximizer();
        assert!(c.violations.is_empty());
        for i in 1..10 {
            for j in 0..6 {
                assert_relative_eq!(c.alpha.get(i, j), star, max_relative = 1e-12);
            }
        }
        assert!(c.alpha.row(0).iter().all(|&a| a == 0.0));
    }

    #[test]
    fn unit_slope_doubles_denominator() {
        let g = Grid2D::new(10, 6, 5e13, 4.6e13).unwrap();
        let p = params(MarketParams::default());
        let c = optimal_control(&ScalarField::from_fn(g, |x, _| x), &p);
        let mp = p.market;
        let expected = mp.theta1 / (2.0 * mp.unit_cost) - mp.theta2;
        for i in 1..9 {
            assert_relative_eq!(c.alpha.get(i, 3), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn steep_value_makes_node_inactive() {
        let g = Grid2D::new(10, 6, 1.0, 1.0).unwrap();
        let p = params(MarketParams::default());
        // slope far above theta1 / (c theta2) - 1
        let c = optimal_control(&ScalarField::from_fn(g, |x, _| 1e12 * x), &p);
        assert_eq!(c.alpha.get(4, 2), 0.0);
    }

    #[test]
    fn decreasing_value_is_flagged() {
        let g = Grid2D::new(10, 6, 1.0, 1.0).unwrap();
        let p = params(MarketParams::default());
        let c = optimal_control(&ScalarField::from_fn(g, |x, _| -10.0 * x), &p);
        assert!(!c.violations.is_empty());
        for &(i, j) in &c.violations {
            assert_eq!(c.alpha.get(i, j), 0.0);
        }
    }

    #[test]
    fn zero_everything_is_fixed_point() {
        let g = Grid2D::new(8, 8, 1.0, 1.0).unwrap();
        let mp = MarketParams { sigma: 0.0, ..MarketParams::default() };
        let p = HjbParams { lambda: 0.0, ..params(mp) };
        let zero = ScalarField::zeros(g);
        let v = evaluate_policy_step(&zero, &zero, &zero, &p, 0.5).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perpetuity_value() {
        let g = Grid2D::new(12, 9, 1.0, 0.5).unwrap();
        let p = params(MarketParams { sigma: 0.3, discount: 0.05, ..MarketParams::default() });
        let zero = ScalarField::zeros(g);
        let u0 = ScalarField::constant(g, 7.0);
        let mut v = zero.clone();
        for _ in 0..5000 {
            v = evaluate_policy_step(&v, &zero, &u0, &p, 1.0).unwrap();
        }
        for &x in v.values() {
            assert_relative_eq!(x, 7.0 / 0.05, max_relative = 1e-8);
        }
    }

    /// Finite-horizon value of a fixed zero control along the wealth
    /// characteristic `x' = r x`, with running payoff `x`.
    #[test]
    fn matches_characteristic_integration() {
        let r = 0.02;
        let horizon = 10.0;
        let g = Grid2D::new(801, 3, 0.05, 1.0).unwrap();
        let mp = MarketParams { sigma: 0.0, discount: r, ..MarketParams::default() };
        let p = HjbParams { lambda: 0.0, ..params(mp) };
        let zero = ScalarField::zeros(g);
        let running = ScalarField::from_fn(g, |x, _| x);
        let steps = 2000;
        let dt = horizon / steps as f64;
        let mut v = zero.clone();
        for _ in 0..steps {
            v = evaluate_policy_step(&v, &zero, &running, &p, dt).unwrap();
        }
        // RK4 on (x, value) with fine steps
        let oracle = |x0: f64| {
            let f = |t: f64, y: [f64; 2]| [r * y[0], (-r * t).exp() * y[0]];
            let n = 20_000;
            let hstep = horizon / n as f64;
            let mut y = [x0, 0.0];
            for k in 0..n {
                let t = k as f64 * hstep;
                let k1 = f(t, y);
                let k2 = f(t + hstep / 2.0, [y[0] + hstep / 2.0 * k1[0], y[1] + hstep / 2.0 * k1[1]]);
                let k3 = f(t + hstep / 2.0, [y[0] + hstep / 2.0 * k2[0], y[1] + hstep / 2.0 * k2[1]]);
                let k4 = f(t + hstep, [y[0] + hstep * k3[0], y[1] + hstep * k3[1]]);
                for d in 0..2 {
                    y[d] += hstep / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
                }
            }
            y[1]
        };
        for i in [20, 100, 300] {
            let exact = oracle(g.x(i));
            assert_relative_eq!(v.get(i, 1), exact, max_relative = 5e-3);
        }
    }

    #[test]
    fn control_consistency_bit_for_bit() {
        let g = Grid2D::new(15, 12, 2e4, 1.0).unwrap();
        let p =
            HjbParams { k: 3e3, h: 1e22, b_hat: 4.0, ..params(MarketParams { sigma: 0.5, ..MarketParams::default() }) };
        let v_next = ScalarField::from_fn(g, |x, b| 1e6 * (1.0 + x / 1e5).ln() + b);
        let p = HjbParams { dt: 0.5 * max_stable_dt(&optimal_control(&v_next, &p).alpha, &p), ..p };
        let step = hjb_backward_step(&v_next, &p).unwrap();
        assert_eq!(optimal_control(&step.value, &p), step.control);
        assert!(step.control.alpha.row(0).iter().all(|&a| a == 0.0));
    }

    #[test]
    fn single_step_rejects_unstable_dt() {
        let g = Grid2D::new(15, 5, 1.0, 1.0).unwrap();
        let p = HjbParams { dt: 1e9, ..params(MarketParams { discount: 0.5, ..MarketParams::default() }) };
        let err = hjb_backward_step(&ScalarField::zeros(g), &p).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn stationary_no_jump_matches_first_order_condition() {
        let g = Grid2D::new(30, 10, 5e4, 1e9).unwrap();
        let p = HjbParams { b_hat: 0.0, k: 0.0, tol: 1e-11, ..params(MarketParams::default()) };
        let sol = solve_stationary_hjb(g, &p, None).unwrap();
        assert!(*sol.residuals.last().unwrap() < p.tol);
        let mp = p.market;
        for i in 1..30 {
            for j in 0..10 {
                let v = &sol.value;
                let a = sol.control.alpha.get(i, j);
                let fwd = if i + 1 < 30 { (v.get(i + 1, j) - v.get(i, j)) / g.dx } else { 0.0 };
                let bwd = (v.get(i, j) - v.get(i - 1, j)) / g.dx;
                // scalar root of theta1 / (a + theta2) = c (1 + slope)
                let root = |s: f64| {
                    let (mut lo, mut hi) = (0.0f64, 1e17f64);
                    let foc = |a: f64| mp.theta1 / (a + mp.theta2) - mp.unit_cost * (1.0 + s);
                    if foc(0.0) <= 0.0 {
                        return 0.0;
                    }
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if foc(mid) > 0.0 {
                            lo = mid
                        } else {
                            hi = mid
                        }
                    }
                    lo
                };
                let candidates = [root(fwd), root(bwd), mp.discount * g.x(i) / mp.unit_cost];
                assert!(
                    candidates.iter().any(|c| (c - a).abs() <= 1e-9 * c.abs().max(1.0)),
                    "cell ({i},{j}): {a} vs {candidates:?}"
                );
            }
        }
    }

    #[test]
    fn stationary_value_nondecreasing_in_wealth() {
        let g = Grid2D::new(40, 8, 4e4, 5e9).unwrap();
        let p = HjbParams { b_hat: 1e10, tol: 1e-11, ..params(MarketParams::default()) };
        let sol = solve_stationary_hjb(g, &p, None).unwrap();
        for j in 0..8 {
            for i in 1..40 {
                assert!(sol.value.get(i, j) >= sol.value.get(i - 1, j));
            }
        }
        assert!(sol.control.violations.is_empty());
    }

    #[test]
    fn closed_form_control_beats_grid_search() {
        let g = Grid2D::new(20, 10, 3e4, 1.0).unwrap();
        let p = HjbParams { k: 2e3, h: 5e21, b_hat: 3.0, ..params(MarketParams::default()) };
        let v = ScalarField::from_fn(g, |x, b| 2e5 * (1.0 + x / 4e4).ln() + 10.0 * b);
        let ctrl = optimal_control(&v, &p);
        let mp = p.market;
        let q = p.jump_rate_per_hash();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let i = rng.random_range(1..19);
            let j = rng.random_range(0..10);
            let a_hat = ctrl.alpha.get(i, j);
            let x = g.x(i);
            let gain = v.interpolate(x + p.k * g.b(j), g.b(j)) - v.get(i, j);
            let fwd = (v.get(i + 1, j) - v.get(i, j)) / g.dx;
            let bwd = (v.get(i, j) - v.get(i - 1, j)) / g.dx;
            // Hamiltonian with the slope matching the sign of the drift
            let ham = |a: f64| {
                let s = mp.discount * x - mp.unit_cost * a;
                let slope = if s > 0.0 { fwd } else { bwd };
                mp.utility_unchecked(a) + s * slope + q * a * gain
            };
            let step = 1e11;
            let best = (0..40_000).map(|n| n as f64 * step).max_by(|a, b| ham(*a).total_cmp(&ham(*b))).unwrap();
            assert!((best - a_hat).abs() <= step, "({i},{j}): grid {best} closed form {a_hat}");
        }
    }
}
