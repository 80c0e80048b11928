//! Stationary value function and optimal hashrate for a fixed network.

use pow_mfg::equilibrium::{steady_coefficients, EquilibriumConfig};
use pow_mfg::grid::Grid2D;
use pow_mfg::hjb::solve_stationary_hjb;
use pow_mfg::market::MarketParams;
use pow_mfg::protocol::ProtocolParams;

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D { nx: 40, ny: 40, ..Grid2D::default() };
    let mp = MarketParams::default();
    let cfg = EquilibriumConfig::default();
    let c = steady_coefficients(mp.static_maximizer(), &cfg, &ProtocolParams::default(), &mp)?;
    let p = c.hjb_params(mp, cfg.stationary_dt, cfg.hjb_tol, cfg.max_inner_iter);
    let sol = solve_stationary_hjb(g, &p, None)?;
    println!("converged in {} iterations, last residual {:.2e}", sol.iterations, sol.residuals.last().unwrap_or(&0.0));
    let j = g.ny / 2;
    println!("{:>12} {:>14} {:>12}", "x", "v", "alpha");
    for i in (0..g.nx).step_by(5) {
        println!("{:>12.3e} {:>14.6e} {:>12.4e}", g.x(i), sol.value.get(i, j), sol.control.alpha.get(i, j));
    }
    println!("control violations: {}", sol.control.violations.len());
    Ok(())
}
