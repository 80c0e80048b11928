//! Fits the revenue curve and the node growth law from synthetic samples.

use pow_mfg::market::{fit_log_revenue, fit_power_law, MarketParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> pow_mfg::Result<()> {
    let truth = MarketParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let noise = Normal::new(0.0, 5.0).expect("valid normal");

    let revenue: Vec<(f64, f64)> = (0..60)
        .map(|k| {
            let alpha = 1e12 * 1.15f64.powi(k);
            let y = truth.theta1 * (alpha + truth.theta2).ln() + truth.theta3 + noise.sample(&mut rng);
            (alpha, y)
        })
        .collect();
    let fit = fit_log_revenue(&revenue)?;
    println!("revenue: theta = {:.4?} +- {:.4?}", fit.coefficients, fit.confidence_halfwidths);

    let nodes: Vec<(f64, f64)> = (1..=40)
        .map(|t| {
            let t = t as f64 * 10.0;
            (t, truth.node_count(t) * (1.0 + 0.01 * noise.sample(&mut rng) / 5.0))
        })
        .collect();
    let fit = fit_power_law(&nodes)?;
    println!("nodes: [a, b] = {:.4?}, residual {:.3e}", fit.coefficients, fit.residual_norm);

    let star = truth.static_maximizer();
    println!("static maximizer {star:.5e}, u = {:.5}, u(0) = {:.5}", truth.utility(star)?, truth.utility(0.0)?);
    Ok(())
}
