//! Agent simulation against the density solver under a fixed policy.

use pow_mfg::equilibrium::Coefficients;
use pow_mfg::fokker_planck::{evolve, DensityState};
use pow_mfg::grid::{Grid2D, ScalarField};
use pow_mfg::hjb::HjbParams;
use pow_mfg::market::MarketParams;
use pow_mfg::montecarlo::{density_distance, empirical_density, simulate_agents, Policy, SimConfig};

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D::new(40, 40, 1.0, 0.025)?;
    let mp = MarketParams { discount: 0.005, unit_cost: 0.02, sigma: 0.3, ..MarketParams::default() };
    let (lambda, k, h, b_hat) = (0.1, 3.0, 1.0, 0.5);
    let alpha = ScalarField::from_fn(g, |x, b| 0.5 + 0.01 * x + 0.2 * b);
    let raw: Vec<f64> = (0..g.len())
        .map(|n| {
            let (i, j) = (n / g.ny, n % g.ny);
            let (di, dj) = ((i as f64 - 8.0) / 3.0, (j as f64 - 20.0) / 4.0);
            if i == 0 {
                0.0
            } else {
                (-di * di - dj * dj).exp()
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let m0 = DensityState::from_masses(g, &raw.iter().map(|m| m / total).collect::<Vec<_>>());

    let horizon = 20.0;
    let p = HjbParams { lambda, k, h, b_hat, market: mp, dt: 0.01, tol: 1e-10, max_iter: 1 };
    let (fp, _) = evolve(&m0, &alpha, &p, horizon)?;
    let c = Coefficients { t: 0.0, lambda, k, h, b_hat, supply: 1.0, nodes: 1.0, segments: 0 };
    for n in [1_000, 10_000, 50_000] {
        let cfg = SimConfig {
            n_agents: n,
            dt: 0.01,
            horizon,
            seed: 3,
            policy: Policy::Field(alpha.clone()),
            sample_times: vec![horizon],
        };
        let sim = simulate_agents(&cfg, &m0, &mp, &[c])?;
        let emp = empirical_density(&sim.snapshots[0].agents, g)?;
        println!("{n:>6} agents: {} jumps, total variation {:.4}", sim.jumps, density_distance(&emp, &fp)?);
    }
    Ok(())
}
