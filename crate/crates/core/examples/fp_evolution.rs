//! Evolves a population under a frozen policy and tracks the inactive mass.

use pow_mfg::fokker_planck::{evolve, wealth_marginal, DensityState};
use pow_mfg::grid::{Grid2D, ScalarField};
use pow_mfg::hjb::HjbParams;
use pow_mfg::market::MarketParams;

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D::new(40, 30, 1.0, 0.05)?;
    let market = MarketParams { discount: 0.01, unit_cost: 0.05, sigma: 0.2, ..MarketParams::default() };
    let p = HjbParams { lambda: 2.0, k: 1.5, h: 4.0, b_hat: 0.7, market, dt: 0.05, tol: 1e-10, max_iter: 1 };
    let alpha = ScalarField::from_fn(g, |x, _| if x > 0.0 { 1.0 + 0.02 * x } else { 0.0 });
    let mut m = DensityState::exponential_wealth(g);
    let mut t = 0.0;
    for _ in 0..5 {
        let (next, substeps) = evolve(&m, &alpha, &p, 10.0)?;
        m = next;
        t += 10.0;
        let marginal = wealth_marginal(&m);
        let mean: f64 = marginal.iter().enumerate().map(|(i, w)| g.x(i) * w).sum();
        println!(
            "t = {t:>4}: mass {:.15}, inactive {:.4}, mean wealth {mean:.3} ({substeps} substeps)",
            m.total_mass(),
            m.eta_mass()
        );
    }
    Ok(())
}
