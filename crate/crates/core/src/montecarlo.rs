//! Agent-based simulation of the node dynamics, used to check the PDE
//! density against sample paths.
//!
//! Each step of length `dt`, an active agent
//! * moves wealth by `(r x - c a) dt`,
//! * with probability `(lambda / h) a dt` receives a reward `k b`,
//! * moves its price by one Euler-Maruyama step of the mean-reverting price.
//!
//! Agents whose wealth reaches zero stop mining and stay at `x = 0`; their
//! price keeps moving, matching the zero-wealth line of the density.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::Coefficients;
use crate::error::{Error, Result};
use crate::fokker_planck::DensityState;
use crate::grid::{Grid2D, ScalarField};
use crate::market::MarketParams;

/// Largest jump probability per step for which thinning is accepted.
pub const THINNING_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentState {
    pub x: f64,
    pub b: f64,
    pub active: bool,
}

/// Hashrate an agent runs at a given time and state.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Static maximizer of the running utility, everywhere.
    Static,
    /// Bilinear lookup in a fixed field.
    Field(ScalarField),
    /// Piecewise constant in time: the field with the latest start `<= t`.
    Path(Vec<(f64, ScalarField)>),
}

impl Policy {
    fn field_at(&self, t: f64) -> Option<&ScalarField> {
        match self {
            Policy::Static => None,
            Policy::Field(f) => Some(f),
            Policy::Path(p) => {
                let k = p.partition_point(|(s, _)| *s <= t).max(1) - 1;
                Some(&p[k].1)
            }
        }
    }

    pub fn alpha(&self, t: f64, x: f64, b: f64, mp: &MarketParams) -> f64 {
        match self.field_at(t) {
            None => mp.static_maximizer(),
            Some(f) => f.interpolate(x, b).max(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_agents: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub policy: Policy,
    /// Times at which the cloud is recorded; rounded to the step grid.
    pub sample_times: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::domain("at least one agent is required"));
        }
        if !(self.dt > 0.0) || !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::domain("dt must be positive and the horizon finite and nonnegative"));
        }
        if self.sample_times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::domain("sample times must lie in [0, horizon]"));
        }
        if let Policy::Path(p) = &self.policy {
            if p.is_empty() || p.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::domain("policy path must be nonempty and sorted in time"));
            }
        }
        Ok(())
    }

    /// Step count and the step length that divides the horizon evenly.
    pub fn steps(&self) -> (usize, f64) {
        let n = (self.horizon / self.dt).ceil() as usize;
        if n == 0 {
            (0, self.dt)
        } else {
            (n, self.horizon / n as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub agents: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub snapshots: Vec<Snapshot>,
    /// Reward jumps summed over agents and steps.
    pub jumps: u64,
}

/// Coefficients in force at `t`: the entry with the latest `t_n <= t`.
fn coefficients_at(path: &[Coefficients], t: f64) -> &Coefficients {
    let k = path.partition_point(|c| c.t <= t).max(1) - 1;
    &path[k]
}

/// Node drawn from the node masses of `state` by inverse transform.
fn sample_node(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Simulates `cfg.n_agents` agents started from nodes drawn from `initial`.
/// Every agent owns the random stream `(seed, agent index)`, so results do
/// not depend on the thread count.
pub fn simulate_agents(
    cfg: &SimConfig,
    initial: &DensityState,
    mp: &MarketParams,
    path: &[Coefficients],
) -> Result<Simulation> {
    cfg.validate()?;
    if path.is_empty() {
        return Err(Error::domain("coefficient path is empty"));
    }
    let g = *initial.grid();
    let masses = initial.masses();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("initial density has no mass"));
    }
    let cdf: Vec<f64> = masses
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m / total;
            Some(*acc)
        })
        .collect();
    let (n_steps, dt) = cfg.steps();
    let sample_steps: Vec<usize> = cfg.sample_times.iter().map(|&t| ((t / dt).round() as usize).min(n_steps)).collect();

    let runs: Vec<(Vec<AgentState>, u64)> = (0..cfg.n_agents)
        .into_par_iter()
        .map(|agent| run_agent(agent as u64, cfg, &g, &cdf, mp, path, n_steps, dt, &sample_steps))
        .collect::<Result<_>>()?;

    let mut snapshots: Vec<Snapshot> = cfg
        .sample_times
        .iter()
        .zip(&sample_steps)
        .map(|(_, &s)| Snapshot { t: s as f64 * dt, agents: Vec::with_capacity(cfg.n_agents) })
        .collect();
    let mut jumps = 0;
    for (states, count) in runs {
        jumps += count;
        for (snap, s) in snapshots.iter_mut().zip(states) {
            snap.agents.push(s);
        }
    }
    Ok(Simulation { snapshots, jumps })
}

#[allow(clippy::too_many_arguments)]
fn run_agent(
    agent: u64,
    cfg: &SimConfig,
    g: &Grid2D,
    cdf: &[f64],
    mp: &MarketParams,
    path: &[Coefficients],
    n_steps: usize,
    dt: f64,
    sample_steps: &[usize],
) -> Result<(Vec<AgentState>, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(agent);
    let node = sample_node(cdf, rng.random::<f64>());
    let (i, j) = (node / g.ny, node % g.ny);
    let mut s = AgentState { x: g.x(i), b: g.b(j), active: i > 0 };
    let mut out = vec![s; sample_steps.len()];
    let record = |out: &mut [AgentState], step: usize, s: AgentState| {
        for (o, &k) in out.iter_mut().zip(sample_steps) {
            if k == step {
                *o = s;
            }
        }
    };
    record(&mut out, 0, s);
    let (x_max, b_max) = (g.x_max(), g.b_max());
    let mut jumps = 0;
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let c = coefficients_at(path, t);
        let noise: f64 = rng.sample(StandardNormal);
        if s.active {
            let a = cfg.policy.alpha(t, s.x, s.b, mp);
            let p = c.lambda / c.h * a * dt;
            if p >= THINNING_LIMIT {
                return Err(Error::Thinning { probability: p, max_dt: THINNING_LIMIT * dt / p });
            }
            let mut x = s.x + (mp.discount * s.x - mp.unit_cost * a) * dt;
            if rng.random::<f64>() < p {
                x += c.k * s.b;
                jumps += 1;
            }
            if x <= 0.0 {
                s.active = false;
                s.x = 0.0;
            } else {
                s.x = x.min(x_max);
            }
        }
        s.b = mp.ou_step(s.b, c.b_hat, dt, noise, b_max);
        record(&mut out, step + 1, s);
    }
    Ok((out, jumps))
}

/// Histogram of a cloud on the grid's nodes, normalized to unit mass.
/// Inactive agents land on the zero-wealth line; active ones on the nearest
/// node with positive wealth.
pub fn empirical_density(agents: &[AgentState], g: Grid2D) -> Result<DensityState> {
    if agents.is_empty() {
        return Err(Error::domain("empty agent cloud"));
    }
    let w = 1.0 / agents.len() as f64;
    let mut masses = vec![0.0; g.len()];
    for a in agents {
        let (i, j) = g.nearest(a.x, a.b);
        let i = if a.active { i.max(1) } else { 0 };
        masses[g.idx(i, j)] += w;
    }
    Ok(DensityState::from_masses(g, &masses))
}

/// Total-variation distance between two states on the same grid.
pub fn density_distance(a: &DensityState, b: &DensityState) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::domain("densities live on different grids"));
    }
    Ok(0.5 * a.masses().iter().zip(b.masses()).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Writes snapshots as `t,x,b,active` rows.
pub fn write_snapshots_csv<W: Write>(snapshots: &[Snapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_fortnight", "x_usd", "b_usd_per_token", "active"])?;
    for s in snapshots {
        for a in &s.agents {
            w.write_record([
                format!("{:e}", s.t),
                format!("{:e}", a.x),
                format!("{:e}", a.b),
                (a.active as u8).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("snapshot csv", e))?;
    Ok(())
}

pub fn save_snapshots_csv(snapshots: &[Snapshot], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_snapshots_csv(snapshots, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fokker_planck::evolve;
    use crate::hjb::HjbParams;
    use approx::assert_relative_eq;

    fn coeffs(lambda: f64, k: f64, h: f64, b_hat: f64) -> Vec<Coefficients> {
        vec![Coefficients { t: 0.0, lambda, k, h, b_hat, supply: 1.0, nodes: 1.0, segments: 0 }]
    }

    fn market(r: f64, c: f64, sigma: f64) -> MarketParams {
        MarketParams { discount: r, unit_cost: c, sigma, ..MarketParams::default() }
    }

    fn cfg(n: usize, dt: f64, horizon: f64, policy: Policy) -> SimConfig {
        SimConfig { n_agents: n, dt, horizon, seed: 7, policy, sample_times: vec![0.0, horizon] }
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let g = Grid2D::new(10, 10, 1.0, 0.1).unwrap();
        let m0 = DensityState::point_mass(g, 4, 3);
        let c = cfg(50, 0.1, 5.0, Policy::Field(ScalarField::zeros(g)));
        let sim = simulate_agents(&c, &m0, &market(0.0, 1.0, 0.0), &coeffs(1.0, 1.0, 1.0, 0.3)).unwrap();
        for a in &sim.snapshots[1].agents {
            assert_eq!((a.x, a.b, a.active), (4.0, g.b(3), true));
        }
        assert_eq!(sim.jumps, 0);
    }

    #[test]
    fn wealth_grows_exponentially() {
        let g = Grid2D::new(100, 4, 1.0, 0.1).unwrap();
        let m0 = DensityState::point_mass(g, 10, 0);
        let (r, t) = (0.02, 20.0);
        for dt in [0.1, 0.01] {
            let c = cfg(4, dt, t, Policy::Field(ScalarField::zeros(g)));
            let sim = simulate_agents(&c, &m0, &market(r, 1.0, 0.0), &coeffs(0.0, 0.0, 1.0, 0.0)).unwrap();
            let exact = 10.0 * (r * t).exp();
            let x = sim.snapshots[1].agents[0].x;
            assert!(((x - exact) / exact).abs() < r * r * t * dt, "dt {dt}: {x} vs {exact}");
        }
    }

    #[test]
    fn jump_count_is_poisson() {
        let g = Grid2D::new(10, 4, 1.0, 0.1).unwrap();
        let m0 = DensityState::point_mass(g, 3, 0);
        let (n, rate, t) = (2000, 0.4, 10.0);
        let c = cfg(n, 0.01, t, Policy::Field(ScalarField::constant(g, 2.0)));
        // jump size k b = 0 keeps wealth and intensity fixed
        let sim = simulate_agents(&c, &m0, &market(0.0, 0.0, 0.0), &coeffs(rate, 0.0, 2.0, 0.0)).unwrap();
        let mean = n as f64 * rate * t;
        assert!((sim.jumps as f64 - mean).abs() < 3.0 * mean.sqrt(), "{} vs {mean}", sim.jumps);
    }

    #[test]
    fn thinning_violation_names_dt() {
        let g = Grid2D::new(5, 4, 1.0, 0.1).unwrap();
        let m0 = DensityState::point_mass(g, 2, 1);
        let c = cfg(3, 0.5, 1.0, Policy::Field(ScalarField::constant(g, 1.0)));
        match simulate_agents(&c, &m0, &market(0.0, 0.0, 0.0), &coeffs(1.0, 1.0, 1.0, 0.0)) {
            Err(Error::Thinning { probability, max_dt }) => {
                assert_relative_eq!(probability, 0.5);
                assert_relative_eq!(max_dt, 0.1);
            }
            other => panic!("expected thinning error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let g = Grid2D::new(20, 20, 1.0, 0.05).unwrap();
        let m0 = DensityState::uniform_interior(g);
        let policy = Policy::Field(ScalarField::from_fn(g, |x, b| 0.5 + 0.05 * x + b));
        let mut c = cfg(500, 0.05, 10.0, policy);
        c.sample_times = vec![0.0, 2.5, 5.0, 10.0];
        let mp = market(0.01, 0.3, 0.4);
        let path = coeffs(0.3, 5.0, 1.0, 0.5);
        let a = simulate_agents(&c, &m0, &mp, &path).unwrap();
        let b = pool(1).install(|| simulate_agents(&c, &m0, &mp, &path).unwrap());
        assert_eq!(a, b);
        for s in &a.snapshots {
            for ag in &s.agents {
                assert!(ag.x >= 0.0 && ag.x <= g.x_max());
                assert!(ag.b >= 0.0 && ag.b <= g.b_max());
                assert!(ag.active || ag.x == 0.0);
            }
        }
        assert!(a.snapshots[3].agents.iter().any(|ag| !ag.active));
    }

    fn pool(n: usize) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
    }

    #[test]
    fn static_policy_uses_maximizer() {
        let mp = MarketParams::default();
        assert_eq!(Policy::Static.alpha(3.0, 1.0, 1.0, &mp), mp.static_maximizer());
    }

    #[test]
    fn path_policy_is_piecewise_constant() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let p = Policy::Path(vec![(0.0, ScalarField::constant(g, 1.0)), (2.0, ScalarField::constant(g, 5.0))]);
        let mp = MarketParams::default();
        assert_eq!(p.alpha(0.0, 1.0, 1.0, &mp), 1.0);
        assert_eq!(p.alpha(1.99, 1.0, 1.0, &mp), 1.0);
        assert_eq!(p.alpha(2.0, 1.0, 1.0, &mp), 5.0);
    }

    #[test]
    fn empirical_density_examples() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let one = empirical_density(&[AgentState { x: 2.1, b: 0.9, active: true }; 5], g).unwrap();
        assert_relative_eq!(one.masses()[g.idx(2, 1)], 1.0);
        let two = [AgentState { x: 1.0, b: 0.0, active: true }, AgentState { x: 0.0, b: 3.0, active: false }];
        let d = empirical_density(&two, g).unwrap();
        assert_relative_eq!(d.total_mass(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(d.masses()[g.idx(1, 0)], 0.5);
        assert_relative_eq!(d.eta_mass(), 0.5);
        // an active agent below half a cell still counts as active
        let low = empirical_density(&[AgentState { x: 0.2, b: 0.0, active: true }], g).unwrap();
        assert_eq!(low.eta_mass(), 0.0);
        assert!(empirical_density(&[], g).is_err());
    }

    #[test]
    fn distance_examples() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let a = DensityState::point_mass(g, 1, 1);
        let b = DensityState::point_mass(g, 2, 0);
        assert_eq!(density_distance(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(density_distance(&a, &b).unwrap(), 1.0);
        let mut half = vec![0.0; g.len()];
        half[g.idx(1, 1)] = 0.5;
        half[g.idx(2, 0)] = 0.5;
        let h = DensityState::from_masses(g, &half);
        assert_relative_eq!(density_distance(&h, &a).unwrap(), 0.5);
        let other = DensityState::point_mass(Grid2D::new(4, 3, 1.0, 1.0).unwrap(), 1, 1);
        assert!(density_distance(&a, &other).is_err());
    }

    #[test]
    fn empirical_density_tracks_fp() {
        let g = Grid2D::new(30, 30, 1.0, 0.05).unwrap();
        let mp = market(0.005, 0.02, 0.3);
        let alpha = ScalarField::from_fn(g, |x, b| 0.5 + 0.01 * x + 0.2 * b);
        let blob: Vec<f64> = (0..g.len())
            .map(|n| {
                let (i, j) = (n / g.ny, n % g.ny);
                if i == 0 {
                    0.0
                } else {
                    (-((i as f64 - 8.0) / 3.0).powi(2) - ((j as f64 - 10.0) / 4.0).powi(2)).exp()
                }
            })
            .collect();
        let total: f64 = blob.iter().sum();
        let m0 = DensityState::from_masses(g, &blob.iter().map(|m| m / total).collect::<Vec<_>>());
        let path = coeffs(0.1, 3.0, 1.0, 0.7);
        let horizon = 10.0;
        let mut c = cfg(20_000, 0.01, horizon, Policy::Field(alpha.clone()));
        c.sample_times = vec![horizon];
        let sim = simulate_agents(&c, &m0, &mp, &path).unwrap();
        let emp = empirical_density(&sim.snapshots[0].agents, g).unwrap();
        let p = HjbParams { lambda: 0.1, k: 3.0, h: 1.0, b_hat: 0.7, market: mp, dt: 0.01, tol: 1e-9, max_iter: 1 };
        let mut fp = m0;
        for _ in 0..1000 {
            fp = evolve(&fp, &alpha, &p, 0.01).unwrap().0;
        }
        let d = density_distance(&emp, &fp).unwrap();
        assert!(d < 0.15, "TV distance {d}");
    }

    #[test]
    fn snapshot_csv_has_header_and_rows() {
        let snaps = vec![Snapshot { t: 1.0, agents: vec![AgentState { x: 2.0, b: 0.5, active: true }] }];
        let mut buf = Vec::new();
        write_snapshots_csv(&snaps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t_fortnight,x_usd,b_usd_per_token,active\n1e0,2e0,5e-1,1\n");
    }
}
