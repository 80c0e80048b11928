//! Time-dependent equilibrium from an exponential wealth profile.

use pow_mfg::equilibrium::{solve_steady_state, solve_transient, EquilibriumConfig};
use pow_mfg::fokker_planck::DensityState;
use pow_mfg::grid::Grid2D;
use pow_mfg::market::MarketParams;
use pow_mfg::protocol::ProtocolParams;

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D { nx: 40, ny: 40, ..Grid2D::default() };
    let cfg = EquilibriumConfig { n_time_steps: 32, store_every: 8, ..EquilibriumConfig::default() };
    let (pp, mp) = (ProtocolParams::default(), MarketParams::default());
    let steady = solve_steady_state(&cfg, &pp, &mp, g)?;
    let sol = solve_transient(&cfg, &DensityState::exponential_wealth(g), &steady, &pp, &mp)?;
    println!(
        "outer iterations {}, final residual {:.2e}",
        sol.diagnostics.outer_iterations,
        sol.diagnostics.outer_residuals.last().unwrap_or(&0.0)
    );
    println!("{:>8} {:>14} {:>10} {:>10}", "t", "alpha_bar", "nodes", "inactive");
    for (n, t) in sol.times.iter().enumerate().step_by(4) {
        let w = &sol.wealth_marginals[n];
        println!("{t:>8.1} {:>14.6e} {:>10.1} {:>10.4}", sol.alpha_bar_path[n], sol.coefficients[n].nodes, w[0]);
    }
    Ok(())
}
