//! Loads a TOML run configuration and solves the stationary equilibrium it describes.

use pow_mfg::config::RunConfig;
use pow_mfg::equilibrium::solve_steady_state;

const EXAMPLE: &str = r#"
name = "example"
initial_density = "exponential"

[grid]
nx = 30
ny = 30

[equilibrium]
n_time_steps = 16
fixed_point_tol = 1e-8
"#;

fn main() -> pow_mfg::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("pow-mfg-example.toml");
            std::fs::write(&p, EXAMPLE).map_err(|e| pow_mfg::Error::io(&p, e))?;
            p
        }
    };
    let cfg = RunConfig::load(&path)?;
    println!("{}", cfg.to_toml()?);
    let s = solve_steady_state(&cfg.equilibrium, &cfg.protocol, &cfg.market, cfg.grid)?;
    println!(
        "{}: mean hashrate {:.6e} after {} outer iterations",
        cfg.name, s.alpha_bar_inf, s.diagnostics.outer_iterations
    );
    Ok(())
}
