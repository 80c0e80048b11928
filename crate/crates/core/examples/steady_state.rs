//! Stationary mean field equilibrium on a coarse grid.

use pow_mfg::equilibrium::{solve_steady_state, EquilibriumConfig};
use pow_mfg::grid::Grid2D;
use pow_mfg::market::MarketParams;
use pow_mfg::protocol::ProtocolParams;

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D { nx: 50, ny: 50, ..Grid2D::default() };
    let mp = MarketParams::default();
    let s = solve_steady_state(&EquilibriumConfig::default(), &ProtocolParams::default(), &mp, g)?;
    let d = &s.diagnostics;
    println!(
        "outer iterations {}, final residual {:.2e}",
        d.outer_iterations,
        d.outer_residuals.last().unwrap_or(&0.0)
    );
    println!("mean hashrate {:.6e} (static maximizer {:.6e})", s.alpha_bar_inf, mp.static_maximizer());
    println!("inactive mass {:.4}, control violations {}", s.m_inf.eta_mass(), d.control_violations);
    println!("coefficients {:?}", s.coefficients);
    Ok(())
}
