//! Post-processing of equilibrium output: active nodes, profitability,
//! attack cost and inflation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::DensityState;
use crate::grid::ScalarField;
use crate::market::MarketParams;
use crate::protocol::{inflation_rate, ProtocolParams};

/// Attacker hashrate shares from 10% to 45% in steps of 5%.
pub const DEFAULT_FRACTIONS: [f64; 8] = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45];

/// `M` times the mass on cells with a strictly positive control. The
/// zero-wealth line is never active.
pub fn active_node_count(state: &DensityState, alpha: &ScalarField, nodes: f64) -> Result<f64> {
    let g = *state.grid();
    if alpha.grid() != &g {
        return Err(Error::domain("control and density live on different grids"));
    }
    let masses = state.masses();
    let active: f64 =
        masses[g.ny..].iter().zip(&alpha.values()[g.ny..]).filter(|(_, &a)| a > 0.0).map(|(m, _)| m).sum();
    Ok(nodes * active)
}

/// `(active, inactive)` node counts; they sum to `nodes`.
pub fn node_split(state: &DensityState, alpha: &ScalarField, nodes: f64) -> Result<(f64, f64)> {
    let active = active_node_count(state, alpha, nodes)?;
    Ok((active, nodes - active))
}

/// Fortnightly utility of a node running `alpha_star`.
pub fn profitability(alpha_star: f64, mp: &MarketParams) -> Result<f64> {
    mp.utility(alpha_star)
}

/// Fortnightly spend to command `fraction` of the network:
/// `fraction * n_active * c * alpha_bar`.
pub fn attack_cost(fraction: f64, n_active: f64, alpha_bar: f64, mp: &MarketParams) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("attacker fraction must lie in (0, 1), got {fraction}")));
    }
    if !(n_active >= 0.0) || !(alpha_bar >= 0.0) {
        return Err(Error::domain("active node count and mean hashrate must be nonnegative"));
    }
    Ok(fraction * n_active * mp.cost(alpha_bar))
}

/// Inflation rate along a realized path of cumulative block counts, with the
/// block intensity at each point.
pub fn inflation_curve(blocks: &[u64], intensity: &[f64], pp: &ProtocolParams) -> Result<Vec<f64>> {
    if blocks.len() != intensity.len() {
        return Err(Error::domain("block and intensity paths differ in length"));
    }
    if blocks.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("block path must be nondecreasing"));
    }
    blocks
        .iter()
        .zip(intensity)
        .map(|(&n, &l)| inflation_rate(pp.block_reward(n), l, pp.cumulative_supply(n)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub times: Vec<f64>,
    pub fractions: Vec<f64>,
    /// `cost_matrix[n][f]`: USD per fortnight at `times[n]`, `fractions[f]`.
    pub cost_matrix: Vec<Vec<f64>>,
    pub active_nodes: Vec<f64>,
}

impl SecurityReport {
    pub fn new(
        times: &[f64],
        active_nodes: &[f64],
        alpha_bar: &[f64],
        fractions: &[f64],
        mp: &MarketParams,
    ) -> Result<Self> {
        if times.len() != active_nodes.len() || times.len() != alpha_bar.len() {
            return Err(Error::domain("time, node and hashrate paths differ in length"));
        }
        let cost_matrix = active_nodes
            .iter()
            .zip(alpha_bar)
            .map(|(&n, &a)| fractions.iter().map(|&f| attack_cost(f, n, a, mp)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Self {
            times: times.to_vec(),
            fractions: fractions.to_vec(),
            cost_matrix,
            active_nodes: active_nodes.to_vec(),
        })
    }

    /// Long format: one `time,fraction,cost` row per entry.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_fortnight", "fraction", "cost_usd_per_fortnight"])?;
        for (t, row) in self.times.iter().zip(&self.cost_matrix) {
            for (f, c) in self.fractions.iter().zip(row) {
                w.write_record([format!("{t:e}"), format!("{f}"), format!("{c:e}")])?;
            }
        }
        w.flush().map_err(|e| Error::io("security csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g() -> Grid2D {
        Grid2D::new(3, 3, 1.0, 1.0).unwrap()
    }

    #[test]
    fn active_count_examples() {
        let g = g();
        let full = DensityState::uniform_interior(g);
        let on = ScalarField::constant(g, 2.0);
        assert_relative_eq!(active_node_count(&full, &on, 40.0).unwrap(), 40.0, max_relative = 1e-14);
        let dead = DensityState::point_mass(g, 0, 1);
        assert_eq!(active_node_count(&dead, &on, 40.0).unwrap(), 0.0);
        // two interior cells, half the mass where the control is positive
        let mut masses = vec![0.0; g.len()];
        masses[g.idx(1, 0)] = 0.5;
        masses[g.idx(2, 1)] = 0.5;
        let half = DensityState::from_masses(g, &masses);
        let mut alpha = ScalarField::zeros(g);
        alpha.set(1, 0, 3.0);
        assert_relative_eq!(active_node_count(&half, &alpha, 1000.0).unwrap(), 500.0, max_relative = 1e-14);
        let (a, i) = node_split(&half, &alpha, 1000.0).unwrap();
        assert_eq!(a + i, 1000.0);
    }

    #[test]
    fn profitability_examples() {
        let mp = MarketParams::default();
        assert_relative_eq!(profitability(1.58e15, &mp).unwrap(), mp.utility(1.58e15).unwrap());
        assert!(profitability(-1.0, &mp).is_err());
        let best = profitability(mp.static_maximizer(), &mp).unwrap();
        for k in 0..200 {
            let a = k as f64 * 2e13;
            assert!(profitability(a, &mp).unwrap() <= best + 1e-9);
        }
    }

    #[test]
    fn attack_cost_examples() {
        let mp = MarketParams::default();
        assert_relative_eq!(attack_cost(0.5, 1000.0, 1e15, &mp).unwrap(), 42150.0, max_relative = 1e-12);
        assert!(attack_cost(1e-9, 1000.0, 1e15, &mp).unwrap() < 1e-4);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(attack_cost(f, 1.0, 1.0, &mp).is_err());
        }
    }

    #[test]
    fn inflation_halves_at_each_epoch() {
        let pp = ProtocolParams::default();
        let per_epoch = pp.halving_blocks / pp.retarget_blocks + 1;
        let blocks: Vec<u64> = (0..=34).map(|l| l * per_epoch).collect();
        let lambda = vec![pp.target_intensity(); blocks.len()];
        let curve = inflation_curve(&blocks, &lambda, &pp).unwrap();
        for w in curve.windows(2).take(31) {
            assert!(w[1] < w[0]);
        }
        assert!(curve[33..].iter().all(|&r| r == 0.0));
        let direct = inflation_rate(50.0, pp.target_intensity(), pp.cumulative_supply(0)).unwrap();
        assert_eq!(curve[0], direct);
        assert!(inflation_curve(&[5, 3], &[1.0, 1.0], &pp).is_err());
        assert!(inflation_curve(&[5], &[1.0, 1.0], &pp).is_err());
    }

    #[test]
    fn report_rows_are_monotone() {
        let mp = MarketParams::default();
        let r = SecurityReport::new(&[0.0, 1.0], &[10.0, 20.0], &[1e15, 2e15], &DEFAULT_FRACTIONS, &mp).unwrap();
        for row in &r.cost_matrix {
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 16);
    }

    proptest! {
        #[test]
        fn cost_is_linear_in_fraction(f in 0.01f64..0.49, n in 0.0f64..1e6, a in 0.0f64..1e17) {
            let mp = MarketParams::default();
            let one = attack_cost(f, n, a, &mp).unwrap();
            let two = attack_cost(2.0 * f, n, a, &mp).unwrap();
            prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two.abs().max(1.0));
            prop_assert!(one >= 0.0);
        }
    }
}
