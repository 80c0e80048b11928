//! Run configuration, loaded from TOML or JSON by file extension.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::fokker_planck::DensityState;
use crate::grid::Grid2D;
use crate::market::MarketParams;
use crate::protocol::ProtocolParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    /// `exp(-x / dx)` on the lowest price column; its `x = 0` share is inactive.
    #[default]
    Exponential,
    /// Unit mass spread evenly over the interior.
    Uniform,
}

impl InitialDensity {
    pub fn build(self, g: Grid2D) -> DensityState {
        match self {
            InitialDensity::Exponential => DensityState::exponential_wealth(g),
            InitialDensity::Uniform => DensityState::uniform_interior(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub n_agents: usize,
    /// Step length, fortnights.
    pub dt: f64,
    /// Simulated span, fortnights.
    pub horizon: f64,
    pub seed: u64,
    /// Evenly spaced snapshots, including both ends.
    pub snapshots: usize,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self { n_agents: 1000, dt: 0.01, horizon: 50.0, seed: 0, snapshots: 5 }
    }
}

impl SimulationSettings {
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.snapshots.max(2);
        (0..n).map(|k| self.horizon * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Names the run directory.
    pub name: String,
    /// Worker threads; all cores when absent. Results do not depend on it.
    pub threads: Option<usize>,
    pub initial_density: InitialDensity,
    /// Attacker shares swept by the security analysis.
    pub attack_fractions: Vec<f64>,
    pub grid: Grid2D,
    pub market: MarketParams,
    pub protocol: ProtocolParams,
    pub equilibrium: EquilibriumConfig,
    pub simulation: SimulationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            threads: None,
            initial_density: InitialDensity::default(),
            attack_fractions: crate::analysis::DEFAULT_FRACTIONS.to_vec(),
            grid: Grid2D::default(),
            market: MarketParams::default(),
            protocol: ProtocolParams::default(),
            equilibrium: EquilibriumConfig::default(),
            simulation: SimulationSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            _ => return Err(Error::Config(format!("{}: expected a .toml or .json file", path.display()))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run name {:?} is not a valid directory name", self.name)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.attack_fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("attack fractions must lie in (0, 1)".into()));
        }
        let s = &self.simulation;
        if s.n_agents == 0 || !(s.dt > 0.0) || !(s.horizon >= 0.0) {
            return Err(Error::Config("simulation needs agents, a positive dt and a nonnegative horizon".into()));
        }
        self.grid.validate()?;
        self.market.validate()?;
        self.protocol.validate()?;
        self.equilibrium.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Reads `(x, y)` pairs from a two-column CSV with a header row.
pub fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Fit(format!("{}: row {} needs two numeric columns", path.display(), line + 2)))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}
