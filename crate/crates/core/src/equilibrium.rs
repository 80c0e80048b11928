//! Mean field equilibrium: the stationary fixed point and the transient
//! forward-backward sweeps coupled through the mean hashrate `alpha_bar(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::{self, wealth_marginal, DensityState};
use crate::grid::{Grid2D, ScalarField};
use crate::hjb::{self, HjbParams};
use crate::market::MarketParams;
use crate::protocol::{per_fortnight, ProtocolParams, FORTNIGHT_SECONDS};

/// How the block intensity is set along the transient path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntensityMode {
    /// Blocks arrive at the target rate, 2016 per fortnight.
    #[default]
    Asymptotic,
    /// Intensity from the retarget rule, fed by the aggregate hashrate of the
    /// previous and current fortnight windows.
    Segment,
}

/// Whether rewards, supply and node count follow the protocol clock or are
/// frozen at their long-run values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Dynamic,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathNorm {
    /// Root-mean-square over the time path; never exceeds the max norm.
    #[default]
    Rms,
    /// Plain Euclidean norm; at least the max norm, so the weight is capped.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inertia {
    Fixed {
        weight: f64,
    },
    /// Weight `|d| / |d|_inf` of the path update `d`, capped at `max_weight`.
    Adaptive {
        norm: PathNorm,
        max_weight: f64,
    },
}

impl Default for Inertia {
    fn default() -> Self {
        Inertia::Fixed { weight: 0.5 }
    }
}

impl Inertia {
    fn validate(&self) -> Result<()> {
        let w = match self {
            Inertia::Fixed { weight } => *weight,
            Inertia::Adaptive { max_weight, .. } => *max_weight,
        };
        if !(0.0..1.0).contains(&w) {
            return Err(Error::Config(format!("inertia weight must lie in [0, 1), got {w}")));
        }
        Ok(())
    }

    /// Weight for the update from `old` toward `candidate`.
    pub fn weight(&self, old: &[f64], candidate: &[f64]) -> f64 {
        match *self {
            Inertia::Fixed { weight } => weight,
            Inertia::Adaptive { norm, max_weight } => {
                let diff: Vec<f64> = old.iter().zip(candidate).map(|(a, b)| b - a).collect();
                let inf = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                if inf == 0.0 {
                    return 0.0;
                }
                let sq: f64 = diff.iter().map(|d| d * d).sum();
                let n = match norm {
                    PathNorm::Rms => (sq / diff.len() as f64).sqrt(),
                    PathNorm::Euclidean => sq.sqrt(),
                };
                (n / inf).min(max_weight)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    /// Horizon in fortnights.
    pub horizon: f64,
    pub n_time_steps: usize,
    pub fp_tol: f64,
    pub hjb_tol: f64,
    pub fixed_point_tol: f64,
    pub max_outer_iter: usize,
    /// Iteration cap for the stationary HJB and FP solves.
    pub max_inner_iter: usize,
    /// Pseudo-time step cap for the stationary solves.
    pub stationary_dt: f64,
    /// Starting mean hashrate of the stationary iteration; defaults to the
    /// protocol's designed initial hashrate per node.
    pub initial_alpha_bar: Option<f64>,
    pub alpha_bar_floor: f64,
    pub intensity_mode: IntensityMode,
    pub schedule: Schedule,
    pub inertia: Inertia,
    /// Keep full fields every this many time steps (the last step is always kept).
    pub store_every: usize,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            horizon: 3328.0,
            n_time_steps: 256,
            fp_tol: 1e-12,
            hjb_tol: 1e-10,
            fixed_point_tol: 1e-6,
            max_outer_iter: 200,
            max_inner_iter: 200_000,
            stationary_dt: 1e4,
            initial_alpha_bar: None,
            alpha_bar_floor: 1.0,
            intensity_mode: IntensityMode::Asymptotic,
            schedule: Schedule::Dynamic,
            inertia: Inertia::default(),
            store_every: 16,
        }
    }
}

impl EquilibriumConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.horizon, "horizon"),
            (self.fp_tol, "fp_tol"),
            (self.hjb_tol, "hjb_tol"),
            (self.fixed_point_tol, "fixed_point_tol"),
            (self.stationary_dt, "stationary_dt"),
            (self.alpha_bar_floor, "alpha_bar_floor"),
        ];
        for (v, name) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_time_steps == 0 || self.max_outer_iter == 0 || self.max_inner_iter == 0 || self.store_every == 0 {
            return Err(Error::Config("step and iteration counts must be positive".into()));
        }
        if let Some(a) = self.initial_alpha_bar {
            if !(a > 0.0) {
                return Err(Error::Config(format!("initial_alpha_bar must be positive, got {a}")));
            }
        }
        self.inertia.validate()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_time_steps as f64
    }
}

/// Model coefficients at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub t: f64,
    /// Blocks per fortnight.
    pub lambda: f64,
    /// Tokens per block.
    pub k: f64,
    /// Total hashrate `M * alpha_bar`.
    pub h: f64,
    pub b_hat: f64,
    /// Tokens in circulation.
    pub supply: f64,
    /// Node count `M(t)`.
    pub nodes: f64,
    /// Retarget segments completed, the block counter of the reward schedule.
    pub segments: u64,
}

impl Coefficients {
    pub fn hjb_params(&self, market: MarketParams, dt: f64, tol: f64, max_iter: usize) -> HjbParams {
        HjbParams { lambda: self.lambda, k: self.k, h: self.h, b_hat: self.b_hat, market, dt, tol, max_iter }
    }
}

/// The protocol's designed per-node hashrate `H0(M) / M`, in TeraHash per
/// fortnight, at the horizon's node count.
pub fn designed_alpha_bar(pp: &ProtocolParams, mp: &MarketParams, horizon: f64) -> Result<f64> {
    let nodes = mp.node_count(horizon);
    Ok(pp.initial_hash_target(nodes)? / nodes / 1e12)
}

/// Long-run coefficients: target intensity, terminal reward and supply, and
/// the node count at the horizon.
pub fn steady_coefficients(
    alpha_bar: f64,
    cfg: &EquilibriumConfig,
    pp: &ProtocolParams,
    mp: &MarketParams,
) -> Result<Coefficients> {
    let nodes = mp.node_count(cfg.horizon);
    let h = nodes * alpha_bar.max(cfg.alpha_bar_floor);
    let segments = pp.terminal_segments();
    let supply = pp.cumulative_supply(segments);
    Ok(Coefficients {
        t: cfg.horizon,
        lambda: per_fortnight(pp.target_intensity()),
        k: pp.block_reward(segments),
        h,
        b_hat: mp.production_price(h, supply)?,
        supply,
        nodes,
        segments,
    })
}

/// Coefficients at each time `times[n]` given the mean hashrate path.
pub fn coefficient_path(
    times: &[f64],
    alpha_bar: &[f64],
    cfg: &EquilibriumConfig,
    pp: &ProtocolParams,
    mp: &MarketParams,
) -> Result<Vec<Coefficients>> {
    if cfg.schedule == Schedule::Frozen {
        let c = steady_coefficients(0.0, cfg, pp, mp)?;
        return times
            .iter()
            .zip(alpha_bar)
            .map(|(&t, &a)| {
                let h = c.nodes * a.max(cfg.alpha_bar_floor);
                Ok(Coefficients { t, h, b_hat: mp.production_price(h, c.supply)?, ..c })
            })
            .collect();
    }
    let dt = cfg.dt();
    let target = per_fortnight(pp.target_intensity());
    let window = pp.retarget_blocks as f64;
    let step_of = |t: f64| ((t / dt).floor() as usize).min(alpha_bar.len() - 1);
    // hashes spent in the one-fortnight window starting at `s`
    let window_hashes = |s: f64| mp.node_count(s) * alpha_bar[step_of(s)].max(cfg.alpha_bar_floor) * 1e12;
    let mut blocks = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for (n, &t) in times.iter().enumerate() {
        let nodes = mp.node_count(t);
        let h = nodes * alpha_bar[n].max(cfg.alpha_bar_floor);
        let lambda = match cfg.intensity_mode {
            IntensityMode::Asymptotic => target,
            IntensityMode::Segment => {
                let s = t.floor();
                if s < 1.0 {
                    target
                } else {
                    let prev = window_hashes(s - 1.0).max(window * 2.0);
                    let cur = window_hashes(s).max(window * 2.0);
                    pp.block_arrival_intensity(prev, cur, mp.node_count(s))? * FORTNIGHT_SECONDS
                }
            }
        };
        let segments = match cfg.intensity_mode {
            IntensityMode::Asymptotic => (t + 1e-9).floor().max(0.0) as u64,
            IntensityMode::Segment => (blocks / window + 1e-9).floor() as u64,
        };
        let supply = pp.cumulative_supply(segments);
        out.push(Coefficients {
            t,
            lambda,
            k: pp.block_reward(segments),
            h,
            b_hat: mp.production_price(h, supply)?,
            supply,
            nodes,
            segments,
        });
        blocks += lambda * dt;
    }
    Ok(out)
}

/// `integral of alpha * m`; the zero-wealth line contributes nothing.
pub fn mean_hashrate(alpha: &ScalarField, state: &DensityState) -> f64 {
    let g = state.grid();
    let masses = state.masses();
    masses[g.ny..].iter().zip(&alpha.values()[g.ny..]).map(|(m, a)| m * a).sum()
}

pub fn inertia_update(old: f64, candidate: f64, w: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::domain(format!("inertia weight must lie in [0, 1), got {w}")));
    }
    Ok(w * old + (1.0 - w) * candidate)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SteadyDiagnostics {
    pub outer_iterations: usize,
    /// `|candidate - alpha_bar| / alpha_bar` per outer iteration.
    pub outer_residuals: Vec<f64>,
    pub alpha_bar_history: Vec<f64>,
    pub hjb_iterations: Vec<usize>,
    pub fp_iterations: Vec<usize>,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub max_renormalization: f64,
    pub control_violations: usize,
    pub floor_events: usize,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub v_inf: ScalarField,
    pub m_inf: DensityState,
    pub alpha_inf: ScalarField,
    /// Mean hashrate the stationary fields were computed with.
    pub alpha_bar_inf: f64,
    /// `integral of alpha_inf * m_inf`.
    pub alpha_bar_candidate: f64,
    pub coefficients: Coefficients,
    pub diagnostics: SteadyDiagnostics,
}

struct SteadyRound {
    coefficients: Coefficients,
    hjb: hjb::StationaryHjb,
    fp: fokker_planck::StationaryFp,
    candidate: f64,
}

fn steady_round(
    alpha_bar: f64,
    warm: Option<&ScalarField>,
    warm_density: Option<&DensityState>,
    cfg: &EquilibriumConfig,
    pp: &ProtocolParams,
    mp: &MarketParams,
    g: Grid2D,
) -> Result<SteadyRound> {
    let coefficients = steady_coefficients(alpha_bar, cfg, pp, mp)?;
    let p = coefficients.hjb_params(*mp, cfg.stationary_dt, cfg.hjb_tol, cfg.max_inner_iter);
    let hjb = hjb::solve_stationary_hjb(g, &p, warm)?;
    let pf = HjbParams { tol: cfg.fp_tol, ..p };
    let fp = fokker_planck::solve_stationary_fp(&hjb.control.alpha, &pf, warm_density)?;
    let candidate = mean_hashrate(&hjb.control.alpha, &fp.state);
    Ok(SteadyRound { coefficients, hjb, fp, candidate })
}

/// Alternates stationary HJB and FP solves with damped updates of the mean
/// hashrate until it reproduces itself.
pub fn solve_steady_state(
    cfg: &EquilibriumConfig,
    pp: &ProtocolParams,
    mp: &MarketParams,
    g: Grid2D,
) -> Result<SteadyState> {
    cfg.validate()?;
    pp.validate()?;
    mp.validate()?;
    g.validate()?;
    let floor = cfg.alpha_bar_floor;
    let mut alpha_bar = match cfg.initial_alpha_bar {
        Some(a) => a,
        None => designed_alpha_bar(pp, mp, cfg.horizon)?,
    };
    let mut diag = SteadyDiagnostics::default();
    if alpha_bar < floor {
        alpha_bar = floor;
        diag.floor_events += 1;
    }
    let mut warm: Option<ScalarField> = None;
    let mut warm_density: Option<DensityState> = None;
    for outer in 1..=cfg.max_outer_iter {
        let round = steady_round(alpha_bar, warm.as_ref(), warm_density.as_ref(), cfg, pp, mp, g)
            .map_err(|e| e.context(format!("stationary outer iteration {outer}")))?;
        let mut candidate = round.candidate;
        if candidate < floor {
            candidate = floor;
            diag.floor_events += 1;
        }
        let residual = (candidate - alpha_bar).abs() / alpha_bar;
        diag.outer_iterations = outer;
        diag.outer_residuals.push(residual);
        diag.alpha_bar_history.push(alpha_bar);
        diag.hjb_iterations.push(round.hjb.iterations);
        diag.fp_iterations.push(round.fp.iterations);
        if residual < cfg.fixed_point_tol {
            diag.hjb_residual = *round.hjb.residuals.last().unwrap_or(&0.0);
            diag.fp_residual = *round.fp.residuals.last().unwrap_or(&0.0);
            diag.max_renormalization = round.fp.max_renormalization;
            diag.control_violations = round.hjb.control.violations.len();
            return Ok(SteadyState {
                v_inf: round.hjb.value,
                m_inf: round.fp.state,
                alpha_inf: round.hjb.control.alpha,
                alpha_bar_inf: alpha_bar,
                alpha_bar_candidate: round.candidate,
                coefficients: round.coefficients,
                diagnostics: diag,
            });
        }
        let w = cfg.inertia.weight(&[alpha_bar], &[candidate]);
        alpha_bar = inertia_update(alpha_bar, candidate, w)?.max(floor);
        warm = Some(round.hjb.value);
        warm_density = Some(round.fp.state);
    }
    let residuals = diag.outer_residuals;
    Err(Error::NonConvergence {
        solver: "stationary equilibrium",
        iterations: cfg.max_outer_iter,
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

/// Fields kept at one time index.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub step: usize,
    pub t: f64,
    pub value: ScalarField,
    pub control: ScalarField,
    pub density: DensityState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransientDiagnostics {
    pub outer_iterations: usize,
    /// `max |candidate - alpha_bar| / max alpha_bar` per outer iteration.
    pub outer_residuals: Vec<f64>,
    pub inertia_weights: Vec<f64>,
    pub dt: f64,
    pub n_time_steps: usize,
    /// Substeps taken by the last backward and forward sweeps.
    pub hjb_substeps: usize,
    pub fp_substeps: usize,
    pub control_violations: usize,
    /// Set when the residual grew during the last three outer iterations.
    pub residual_not_monotone: bool,
    pub max_mass_error: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// `t_n = n * dt`, `n = 0..n_time_steps`.
    pub times: Vec<f64>,
    /// Mean hashrate implied by the final sweep at each `t_n`.
    pub alpha_bar_path: Vec<f64>,
    /// Damped path the final sweep was computed with.
    pub alpha_bar_input: Vec<f64>,
    pub coefficients: Vec<Coefficients>,
    /// Wealth marginal at every `t_n` and at the horizon.
    pub wealth_marginals: Vec<Vec<f64>>,
    pub slices: Vec<TimeSlice>,
    pub final_density: DensityState,
    pub v_inf: ScalarField,
    pub m_inf: DensityState,
    pub alpha_inf: ScalarField,
    pub diagnostics: TransientDiagnostics,
}

struct Sweep {
    candidate: Vec<f64>,
    coefficients: Vec<Coefficients>,
    marginals: Vec<Vec<f64>>,
    slices: Vec<TimeSlice>,
    final_density: DensityState,
    hjb_substeps: usize,
    fp_substeps: usize,
    violations: usize,
    max_mass_error: f64,
}

fn sweep(
    alpha_bar: &[f64],
    times: &[f64],
    m0: &DensityState,
    steady: &SteadyState,
    cfg: &EquilibriumConfig,
    pp: &ProtocolParams,
    mp: &MarketParams,
) -> Result<Sweep> {
    let n = times.len();
    let dt = cfg.dt();
    let coefficients = coefficient_path(times, alpha_bar, cfg, pp, mp)?;
    let params: Vec<HjbParams> =
        coefficients.iter().map(|c| c.hjb_params(*mp, dt, cfg.hjb_tol, cfg.max_inner_iter)).collect();

    let keep = |step: usize| step.is_multiple_of(cfg.store_every) || step + 1 == n;
    let mut values: Vec<Option<ScalarField>> = vec![None; n];
    let mut controls = Vec::with_capacity(n);
    let mut v = steady.v_inf.clone();
    let mut hjb_substeps = 0;
    let mut violations = 0;
    for step in (0..n).rev() {
        let (next, sub) = hjb::backward_over(&v, &params[step], dt)
            .map_err(|e| e.context(format!("backward sweep at t = {}", times[step])))?;
        hjb_substeps += sub;
        violations += next.control.violations.len();
        v = next.value;
        if keep(step) {
            values[step] = Some(v.clone());
        }
        controls.push(next.control.alpha);
    }
    controls.reverse();

    let mut m = m0.clone();
    let mut candidate = Vec::with_capacity(n);
    let mut marginals = Vec::with_capacity(n + 1);
    let mut slices = Vec::new();
    let mut fp_substeps = 0;
    let mut max_mass_error: f64 = 0.0;
    for step in 0..n {
        max_mass_error = max_mass_error.max((m.total_mass() - 1.0).abs());
        candidate.push(mean_hashrate(&controls[step], &m));
        marginals.push(wealth_marginal(&m));
        if let Some(value) = values[step].take() {
            slices.push(TimeSlice { step, t: times[step], value, control: controls[step].clone(), density: m.clone() });
        }
        let (next, sub) = fokker_planck::evolve(&m, &controls[step], &params[step], dt)
            .map_err(|e| e.context(format!("forward sweep at t = {}", times[step])))?;
        fp_substeps += sub;
        m = next;
    }
    max_mass_error = max_mass_error.max((m.total_mass() - 1.0).abs());
    marginals.push(wealth_marginal(&m));
    Ok(Sweep {
        candidate,
        coefficients,
        marginals,
        slices,
        final_density: m,
        hjb_substeps,
        fp_substeps,
        violations,
        max_mass_error,
    })
}

/// Transient equilibrium from `m0` over the configured horizon, with the
/// stationary solution as terminal data. The mean hashrate path starts at
/// the stationary value.
pub fn solve_transient(
    cfg: &EquilibriumConfig,
    m0: &DensityState,
    steady: &SteadyState,
    pp: &ProtocolParams,
    mp: &MarketParams,
) -> Result<EquilibriumSolution> {
    cfg.validate()?;
    let g = *m0.grid();
    if steady.v_inf.grid() != &g {
        return Err(Error::domain("initial density and stationary solution use different grids"));
    }
    if (m0.total_mass() - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!("initial density has mass {}", m0.total_mass())));
    }
    let n = cfg.n_time_steps;
    let dt = cfg.dt();
    let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    let mut alpha_bar = vec![steady.alpha_bar_inf.max(cfg.alpha_bar_floor); n];
    let mut diag = TransientDiagnostics { dt, n_time_steps: n, ..Default::default() };
    for outer in 1..=cfg.max_outer_iter {
        let s = sweep(&alpha_bar, &times, m0, steady, cfg, pp, mp)
            .map_err(|e| e.context(format!("transient outer iteration {outer}")))?;
        let scale = alpha_bar.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let residual = s.candidate.iter().zip(&alpha_bar).fold(0.0f64, |m, (c, a)| m.max((c - a).abs())) / scale;
        diag.outer_iterations = outer;
        diag.outer_residuals.push(residual);
        diag.hjb_substeps = s.hjb_substeps;
        diag.fp_substeps = s.fp_substeps;
        diag.control_violations = s.violations;
        diag.max_mass_error = s.max_mass_error;
        if residual < cfg.fixed_point_tol {
            let r = &diag.outer_residuals;
            diag.residual_not_monotone = r.len() >= 3 && r[r.len() - 3..].windows(2).any(|w| w[1] > w[0]);
            return Ok(EquilibriumSolution {
                times,
                alpha_bar_path: s.candidate,
                alpha_bar_input: alpha_bar,
                coefficients: s.coefficients,
                wealth_marginals: s.marginals,
                slices: s.slices,
                final_density: s.final_density,
                v_inf: steady.v_inf.clone(),
                m_inf: steady.m_inf.clone(),
                alpha_inf: steady.alpha_inf.clone(),
                diagnostics: diag,
            });
        }
        let target: Vec<f64> = s.candidate.iter().map(|c| c.max(cfg.alpha_bar_floor)).collect();
        let w = cfg.inertia.weight(&alpha_bar, &target);
        diag.inertia_weights.push(w);
        for (a, c) in alpha_bar.iter_mut().zip(&target) {
            *a = inertia_update(*a, *c, w)?.max(cfg.alpha_bar_floor);
        }
    }
    let residuals = diag.outer_residuals;
    Err(Error::NonConvergence {
        solver: "transient equilibrium",
        iterations: cfg.max_outer_iter,
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}
