//! Active nodes and attack cost along a transient equilibrium.

use pow_mfg::analysis::{active_node_count, SecurityReport, DEFAULT_FRACTIONS};
use pow_mfg::equilibrium::{solve_steady_state, solve_transient, EquilibriumConfig};
use pow_mfg::fokker_planck::DensityState;
use pow_mfg::grid::Grid2D;
use pow_mfg::market::MarketParams;
use pow_mfg::protocol::ProtocolParams;

fn main() -> pow_mfg::Result<()> {
    let g = Grid2D { nx: 30, ny: 30, ..Grid2D::default() };
    let cfg = EquilibriumConfig { n_time_steps: 16, store_every: 4, ..EquilibriumConfig::default() };
    let (pp, mp) = (ProtocolParams::default(), MarketParams::default());
    let steady = solve_steady_state(&cfg, &pp, &mp, g)?;
    let sol = solve_transient(&cfg, &DensityState::exponential_wealth(g), &steady, &pp, &mp)?;

    let times: Vec<f64> = sol.slices.iter().map(|s| s.t).collect();
    let nodes = sol
        .slices
        .iter()
        .map(|s| active_node_count(&s.density, &s.control, sol.coefficients[s.step].nodes))
        .collect::<pow_mfg::Result<Vec<_>>>()?;
    let alpha: Vec<f64> = sol.slices.iter().map(|s| sol.alpha_bar_path[s.step]).collect();
    let report = SecurityReport::new(&times, &nodes, &alpha, &DEFAULT_FRACTIONS, &mp)?;
    for (k, t) in report.times.iter().enumerate() {
        let row = &report.cost_matrix[k];
        println!(
            "t = {t:>7.1}: {:>10.1} active nodes, cost at 10% {:.3e}, at 45% {:.3e} USD/fortnight",
            nodes[k], row[0], row[7]
        );
    }
    report.write_csv(std::io::stdout().lock())
}
