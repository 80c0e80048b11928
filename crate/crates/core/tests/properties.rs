use pow_mfg::fokker_planck::{fp_forward_step, DensityState};
use pow_mfg::grid::{Grid2D, ScalarField};
use pow_mfg::hjb::{evaluate_policy_step, max_stable_dt, HjbParams};
use pow_mfg::market::MarketParams;
use pow_mfg::protocol::ProtocolParams;
use proptest::prelude::*;

fn setup(nx: usize, ny: usize, lambda: f64, k: f64, sigma: f64, alphas: &[f64]) -> (Grid2D, ScalarField, HjbParams) {
    let g = Grid2D::new(nx, ny, 1.0, 0.25).unwrap();
    let alpha = ScalarField::from_values(g, alphas[..g.len()].to_vec()).unwrap();
    let market = MarketParams { discount: 0.02, unit_cost: 0.05, sigma, ..MarketParams::default() };
    let mut p = HjbParams { lambda, k, h: 2.0, b_hat: 0.6, market, dt: 1.0, tol: 1e-12, max_iter: 1 };
    p.dt = (0.9 * max_stable_dt(&alpha, &p)).min(1.0);
    (g, alpha, p)
}

fn inputs() -> impl Strategy<Value = (usize, usize, f64, f64, f64, Vec<f64>, Vec<f64>)> {
    (3usize..9, 3usize..9, 0.0f64..10.0, 0.0f64..3.0, 0.0f64..0.5).prop_flat_map(|(nx, ny, l, k, s)| {
        (
            Just(nx),
            Just(ny),
            Just(l),
            Just(k),
            Just(s),
            prop::collection::vec(0.0f64..4.0, nx * ny),
            prop::collection::vec(0.0f64..1.0, nx * ny),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_step_keeps_mass_and_sign((nx, ny, l, k, s, a, m) in inputs()) {
        let (g, alpha, p) = setup(nx, ny, l, k, s, &a);
        let state = DensityState::from_masses(g, &m);
        let next = fp_forward_step(&state, &alpha, &p).unwrap();
        prop_assert!((next.total_mass() - state.total_mass()).abs() <= 1e-12 * state.total_mass().max(1.0));
        prop_assert!(next.masses().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn value_step_preserves_order((nx, ny, l, k, s, a, m) in inputs()) {
        let (g, alpha, p) = setup(nx, ny, l, k, s, &a);
        let low = ScalarField::from_values(g, m.clone()).unwrap();
        let high = ScalarField::from_values(g, m.iter().zip(&a).map(|(x, y)| x + y).collect()).unwrap();
        let running = ScalarField::constant(g, 1.0);
        let lo = evaluate_policy_step(&low, &alpha, &running, &p, p.dt).unwrap();
        let hi = evaluate_policy_step(&high, &alpha, &running, &p, p.dt).unwrap();
        prop_assert!(lo.values().iter().zip(hi.values()).all(|(x, y)| *y >= *x - 1e-12));
    }

    #[test]
    fn density_step_is_transpose_of_value_step((nx, ny, l, k, s, a, _m) in inputs()) {
        let (g, alpha, mut p) = setup(nx, ny, l, k, s, &a);
        p.market.discount = 1e-300;
        p.dt = (0.9 * max_stable_dt(&alpha, &p)).min(1.0);
        let n = g.len();
        let zero = ScalarField::zeros(g);
        let unit = |a: usize| {
            let mut e = vec![0.0; n];
            e[a] = 1.0;
            e
        };
        for b in 0..n {
            let v = evaluate_policy_step(&ScalarField::from_values(g, unit(b)).unwrap(), &alpha, &zero, &p, p.dt).unwrap();
            for a in 0..n {
                let col = fp_forward_step(&DensityState::from_masses(g, &unit(a)), &alpha, &p).unwrap().masses();
                prop_assert!((col[b] - v.values()[a]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn supply_is_monotone_and_capped(n in 0u64..20_000, extra in 0u64..5_000) {
        let pp = ProtocolParams::default();
        let a = pp.cumulative_supply(n);
        let b = pp.cumulative_supply(n + extra);
        prop_assert!(b >= a);
        prop_assert!(b <= 2.1e7 * (1.0 + 1e-12));
        prop_assert!(pp.block_reward(n + extra) <= pp.block_reward(n));
    }
}
