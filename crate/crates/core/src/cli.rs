//! Command-line front end. Physics parameters come from one config file;
//! flags only pick subcommand behavior and paths.
//!
//! Exit codes: 0 success, 1 solver failure, 2 usage or validation error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, SecurityReport};
use crate::config::{read_samples, RunConfig};
use crate::equilibrium::{self, Coefficients, EquilibriumSolution, SteadyState};
use crate::error::{Error, Result};
use crate::fokker_planck::DensityState;
use crate::grid::{Grid2D, ScalarField};
use crate::market::{self, FitResult};
use crate::montecarlo::{self, Policy, SimConfig};
use crate::protocol::{inflation_rate, per_fortnight, HashSegment, ProtocolParams};

/// Output root used when `--out` is absent.
pub const RUN_DIR_ENV: &str = "MFG_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "pow-mfg", version, about = "Mean field equilibrium of the proof-of-work mining game")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reward, supply, intensity, difficulty and inflation of the protocol.
    Protocol(ProtocolArgs),
    /// Stationary equilibrium.
    Steady(RunArgs),
    /// Time-dependent equilibrium from the initial population.
    Transient(TransientArgs),
    /// Agent-based simulation, optionally checked against a transient run.
    Simulate(SimulateArgs),
    /// Curve fit of a two-column CSV.
    Fit(FitArgs),
    /// Active nodes, attack cost and inflation of a finished run.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["blocks", "sweep_halvings"]))]
pub struct ProtocolArgs {
    /// Block counter (completed retarget segments) to evaluate.
    #[arg(long)]
    pub blocks: Option<u64>,
    /// One row at the start of every halving epoch.
    #[arg(long)]
    pub sweep_halvings: bool,
    /// Node count used for the difficulty column.
    #[arg(long, default_value_t = 1.0)]
    pub nodes: f64,
    /// Hashes of the segment used for the difficulty column; defaults to
    /// the designed initial target for `--nodes`.
    #[arg(long)]
    pub segment_hashes: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to `$MFG_RUN_DIR/<name>-<command>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransientArgs {
    #[arg(long, conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Rerun with the configuration recorded in a previous manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transient run whose controls and coefficients drive the agents and
    /// whose densities they are compared against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FitModel {
    /// `M = a t^b`
    PowerLaw,
    /// `ln y = rate t + intercept`
    Exponential,
    /// `revenue = theta1 ln(alpha + theta2) + theta3`
    LogRevenue,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a header row and two numeric columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: FitModel,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of a steady or transient run.
    #[arg(long)]
    pub run: PathBuf,
    /// Report directory; defaults to `<run>/analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Record of one run, written last and atomically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: RunConfig,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub convergence: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Context { source, .. } => exit_code(source),
        Error::Config(_) | Error::Domain(_) | Error::Fit(_) | Error::Io { .. } | Error::Thinning { .. } => 2,
        _ => 1,
    }
}

/// Parses the process arguments and runs; returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Protocol(a) => cmd_protocol(&a),
        Command::Steady(a) => cmd_steady(&a),
        Command::Transient(a) => cmd_transient(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // fails only if the pool already exists, in which case it stays as is
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run_dir(out: Option<&Path>, name: &str, command: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(RUN_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("{name}-{command}"))
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects files written into a run directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(name.to_string());
        Ok(p)
    }

    fn field(&mut self, name: &str, f: &ScalarField) -> Result<()> {
        let p = self.path(name)?;
        f.save_csv(&p)
    }

    fn eta(&mut self, name: &str, state: &DensityState) -> Result<()> {
        let g = *state.grid();
        let rows = state.eta.iter().enumerate().map(|(j, e)| vec![format!("{:e}", g.b(j)), format!("{e:e}")]);
        self.table(name, &["b_usd_per_token", "eta_per_usd_per_token"], rows)
    }

    fn density(&mut self, stem: &str, state: &DensityState) -> Result<()> {
        self.field(&format!("{stem}.csv"), &state.interior)?;
        self.eta(&format!("{stem}_eta.csv"), state)
    }

    fn table<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let p = self.path(name)?;
        let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let p = self.path(name)?;
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn finish(self, command: &str, config: &RunConfig, started: f64, result: &Result<serde_json::Value>) -> Result<()> {
        let mut outputs = self.files;
        outputs.push("manifest.json".into());
        let (status, error, convergence) = match result {
            Ok(v) => (RunStatus::Ok, None, v.clone()),
            Err(e) => (RunStatus::Failed, Some(e.to_string()), failure_summary(e)),
        };
        let manifest = RunManifest {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            started_unix: started,
            finished_unix: unix_now(),
            status,
            error,
            outputs,
            convergence,
        };
        let tmp = self.dir.join("manifest.json.tmp");
        let dest = self.dir.join("manifest.json");
        std::fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
    }
}

fn failure_summary(e: &Error) -> serde_json::Value {
    match e {
        Error::Context { source, .. } => failure_summary(source),
        Error::NonConvergence { solver, iterations, last, residuals } => serde_json::json!({
            "solver": solver, "iterations": iterations, "last_residual": last, "residuals": residuals,
        }),
        _ => serde_json::Value::Null,
    }
}

/// Runs `body`, then records the manifest whether or not it succeeded.
fn with_manifest(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    body: impl FnOnce(&mut Outputs) -> Result<serde_json::Value>,
) -> Result<()> {
    let started = unix_now();
    let mut out = Outputs::create(dir)?;
    let result = body(&mut out);
    out.finish(command, config, started, &result)?;
    result.map(|_| ())
}

fn protocol_row(pp: &ProtocolParams, blocks: u64, nodes: f64, hashes: Option<f64>) -> Result<Vec<String>> {
    let reward = pp.block_reward(blocks);
    let supply = pp.cumulative_supply(blocks);
    let lambda = pp.target_intensity();
    let segment_hashes = match hashes {
        Some(h) => h,
        None => pp.initial_hash_target(nodes)?,
    };
    let segment = HashSegment { index: blocks, total_hashes: segment_hashes, elapsed: pp.retarget_window_seconds() };
    let difficulty = pp.difficulty_from_hashes(&segment, nodes)?;
    let inflation = inflation_rate(reward, per_fortnight(lambda), supply)?;
    Ok(vec![
        pp.epoch(blocks).to_string(),
        blocks.to_string(),
        format!("{reward:e}"),
        format!("{supply:e}"),
        format!("{lambda:e}"),
        format!("{:e}", per_fortnight(lambda)),
        format!("{difficulty:e}"),
        format!("{inflation:e}"),
    ])
}

pub const PROTOCOL_HEADER: [&str; 8] = [
    "epoch",
    "blocks",
    "reward_tokens_per_block",
    "supply_tokens",
    "intensity_blocks_per_second",
    "intensity_blocks_per_fortnight",
    "difficulty",
    "inflation_per_fortnight",
];

fn cmd_protocol(a: &ProtocolArgs) -> Result<()> {
    let pp = load_config(a.config.as_deref())?.protocol;
    let blocks: Vec<u64> = match a.blocks {
        Some(n) => vec![n],
        None => (0..=pp.max_halvings as u64).map(|l| (l * pp.halving_blocks).div_ceil(pp.retarget_blocks)).collect(),
    };
    let rows = blocks.iter().map(|&n| protocol_row(&pp, n, a.nodes, a.segment_hashes)).collect::<Result<Vec<_>>>()?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PROTOCOL_HEADER)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io("protocol table", e))?;
    Ok(())
}

fn steady_summary(s: &SteadyState) -> serde_json::Value {
    serde_json::json!({
        "alpha_bar_inf": s.alpha_bar_inf,
        "alpha_bar_candidate": s.alpha_bar_candidate,
        "coefficients": s.coefficients,
        "diagnostics": s.diagnostics,
    })
}

fn write_steady(out: &mut Outputs, s: &SteadyState) -> Result<()> {
    out.field("v_inf.csv", &s.v_inf)?;
    out.field("m_inf.csv", &s.m_inf.interior)?;
    out.eta("eta_inf.csv", &s.m_inf)?;
    out.field("alpha_inf.csv", &s.alpha_inf)
}

fn solve_steady(cfg: &RunConfig) -> Result<SteadyState> {
    equilibrium::solve_steady_state(&cfg.equilibrium, &cfg.protocol, &cfg.market, cfg.grid)
}

fn cmd_steady(a: &RunArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    configure_threads(cfg.threads);
    let dir = run_dir(a.out.as_deref(), &cfg.name, "steady");
    with_manifest(&dir, "steady", &cfg, |out| {
        let s = solve_steady(&cfg)?;
        write_steady(out, &s)?;
        let summary = steady_summary(&s);
        out.json("diagnostics.json", &summary)?;
        println!(
            "steady: alpha_bar_inf = {:e} after {} iterations -> {}",
            s.alpha_bar_inf,
            s.diagnostics.outer_iterations,
            dir.display()
        );
        Ok(summary)
    })
}

const COEFFICIENT_HEADER: [&str; 8] = [
    "t_fortnight",
    "lambda_blocks_per_fortnight",
    "k_tokens_per_block",
    "h_terahash_per_fortnight",
    "b_hat_usd_per_token",
    "supply_tokens",
    "nodes",
    "segments",
];

fn coefficient_row(c: &Coefficients) -> Vec<String> {
    vec![
        format!("{:e}", c.t),
        format!("{:e}", c.lambda),
        format!("{:e}", c.k),
        format!("{:e}", c.h),
        format!("{:e}", c.b_hat),
        format!("{:e}", c.supply),
        format!("{:e}", c.nodes),
        c.segments.to_string(),
    ]
}

fn parse_coefficient_row(rec: &csv::StringRecord) -> Result<Coefficients> {
    let f = |k: usize| -> Result<f64> {
        rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::domain(format!("bad coefficient row {rec:?}")))
    };
    Ok(Coefficients {
        t: f(0)?,
        lambda: f(1)?,
        k: f(2)?,
        h: f(3)?,
        b_hat: f(4)?,
        supply: f(5)?,
        nodes: f(6)?,
        segments: rec.get(7).and_then(|s| s.parse().ok()).ok_or_else(|| Error::domain("bad segment count"))?,
    })
}

fn slice_stem(step: usize) -> String {
    format!("slices/step_{step:05}")
}

fn write_transient(out: &mut Outputs, sol: &EquilibriumSolution) -> Result<()> {
    let g = *sol.v_inf.grid();
    out.table(
        "alpha_bar.csv",
        &["t_fortnight", "alpha_bar_terahash_per_fortnight", "alpha_bar_input_terahash_per_fortnight"],
        sol.times
            .iter()
            .zip(&sol.alpha_bar_path)
            .zip(&sol.alpha_bar_input)
            .map(|((t, a), i)| vec![format!("{t:e}"), format!("{a:e}"), format!("{i:e}")]),
    )?;
    let dt = sol.diagnostics.dt;
    let rows = sol.wealth_marginals.iter().enumerate().flat_map(|(n, wm)| {
        let t = n as f64 * dt;
        wm.iter().enumerate().map(move |(i, m)| vec![format!("{t:e}"), format!("{:e}", g.x(i)), format!("{m:e}")])
    });
    out.table("wealth_marginal.csv", &["t_fortnight", "x_usd", "mass"], rows)?;
    out.table("coefficients.csv", &COEFFICIENT_HEADER, sol.coefficients.iter().map(coefficient_row))?;
    out.table(
        "slices/index.csv",
        &["step", "t_fortnight"],
        sol.slices.iter().map(|s| vec![s.step.to_string(), format!("{:e}", s.t)]),
    )?;
    for s in &sol.slices {
        let stem = slice_stem(s.step);
        out.field(&format!("{stem}_value.csv"), &s.value)?;
        out.field(&format!("{stem}_control.csv"), &s.control)?;
        out.density(&format!("{stem}_density"), &s.density)?;
    }
    out.density("final_density", &sol.final_density)
}

fn cmd_transient(a: &TransientArgs) -> Result<()> {
    let (cfg, default_dir) = match &a.from_manifest {
        Some(p) => {
            let m = RunManifest::load(p)?;
            m.config.validate()?;
            (m.config, p.parent().map(Path::to_path_buf))
        }
        None => (load_config(a.config.as_deref())?, None),
    };
    configure_threads(cfg.threads);
    let dir = match (&a.out, default_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) if a.from_manifest.is_some() => d,
        _ => run_dir(None, &cfg.name, "transient"),
    };
    with_manifest(&dir, "transient", &cfg, |out| {
        let steady = solve_steady(&cfg)?;
        write_steady(out, &steady)?;
        let m0 = cfg.initial_density.build(cfg.grid);
        let sol = equilibrium::solve_transient(&cfg.equilibrium, &m0, &steady, &cfg.protocol, &cfg.market)?;
        write_transient(out, &sol)?;
        let summary = serde_json::json!({
            "steady": steady_summary(&steady),
            "transient": sol.diagnostics,
            "final_residual": sol.diagnostics.outer_residuals.last(),
        });
        out.json("diagnostics.json", &summary)?;
        println!(
            "transient: {} outer iterations, final residual {:e} -> {}",
            sol.diagnostics.outer_iterations,
            sol.diagnostics.outer_residuals.last().copied().unwrap_or(f64::NAN),
            dir.display()
        );
        Ok(summary)
    })
}

/// Pieces of a finished transient run needed to drive and check agents.
struct Reference {
    config: RunConfig,
    coefficients: Vec<Coefficients>,
    /// `(t, control, density)` per stored slice.
    slices: Vec<(f64, ScalarField, DensityState)>,
}

fn load_density(dir: &Path, stem: &str, g: Grid2D) -> Result<DensityState> {
    let interior = ScalarField::load_csv(g, &dir.join(format!("{stem}.csv")))?;
    DensityState::new(interior, load_eta(&dir.join(format!("{stem}_eta.csv")), g)?)
}

fn load_run_manifest(dir: &Path) -> Result<RunManifest> {
    let m = RunManifest::load(&dir.join("manifest.json"))?;
    if m.status != RunStatus::Ok {
        return Err(Error::domain(format!("run {} did not finish successfully", dir.display())));
    }
    Ok(m)
}

fn load_reference(dir: &Path) -> Result<Reference> {
    let m = load_run_manifest(dir)?;
    if m.command != "transient" {
        return Err(Error::domain(format!("{} is a {} run, a transient run is needed", dir.display(), m.command)));
    }
    let g = m.config.grid;
    let path = dir.join("coefficients.csv");
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let coefficients =
        csv::Reader::from_reader(file).records().map(|r| parse_coefficient_row(&r?)).collect::<Result<Vec<_>>>()?;
    let path = dir.join("slices/index.csv");
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut slices = Vec::new();
    for rec in csv::Reader::from_reader(file).records() {
        let rec = rec?;
        let step: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| Error::domain("bad slice index"))?;
        let t: f64 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::domain("bad slice time"))?;
        let stem = slice_stem(step);
        let control = ScalarField::load_csv(g, &dir.join(format!("{stem}_control.csv")))?;
        let density = load_density(dir, &format!("{stem}_density"), g)?;
        slices.push((t, control, density));
    }
    if slices.is_empty() {
        return Err(Error::domain("reference run stores no slices"));
    }
    Ok(Reference { config: m.config, coefficients, slices })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let reference = a.reference.as_deref().map(load_reference).transpose()?;
    let mut cfg = match (&a.config, &reference) {
        (None, Some(r)) => r.config.clone(),
        (Some(p), Some(r)) => RunConfig { simulation: RunConfig::load(p)?.simulation, ..r.config.clone() },
        (p, None) => load_config(p.as_deref())?,
    };
    if let Some(n) = a.agents {
        cfg.simulation.n_agents = n;
    }
    if let Some(s) = a.seed {
        cfg.simulation.seed = s;
    }
    cfg.validate()?;
    configure_threads(cfg.threads);
    let dir = run_dir(a.out.as_deref(), &cfg.name, "simulate");
    let s = cfg.simulation.clone();
    with_manifest(&dir, "simulate", &cfg, |out| {
        let (policy, path, initial, sample_times) = match &reference {
            Some(r) => {
                let horizon = s.horizon.min(r.slices.last().map(|x| x.0).unwrap_or(0.0));
                let times: Vec<f64> = r.slices.iter().map(|x| x.0).filter(|&t| t <= horizon).collect();
                let policy = Policy::Path(r.slices.iter().map(|(t, c, _)| (*t, c.clone())).collect());
                (policy, r.coefficients.clone(), r.slices[0].2.clone(), times)
            }
            None => {
                let c = equilibrium::steady_coefficients(
                    cfg.market.static_maximizer(),
                    &cfg.equilibrium,
                    &cfg.protocol,
                    &cfg.market,
                )?;
                let path = vec![Coefficients { t: 0.0, ..c }];
                (Policy::Static, path, cfg.initial_density.build(cfg.grid), s.sample_times())
            }
        };
        let horizon = sample_times.iter().copied().fold(0.0, f64::max);
        let sim_cfg = SimConfig { n_agents: s.n_agents, dt: s.dt, horizon, seed: s.seed, policy, sample_times };
        let sim = montecarlo::simulate_agents(&sim_cfg, &initial, &cfg.market, &path)?;
        let p = out.path("snapshots.csv")?;
        montecarlo::save_snapshots_csv(&sim.snapshots, &p)?;
        let last = sim.snapshots.last().ok_or_else(|| Error::domain("no snapshots requested"))?;
        let empirical = montecarlo::empirical_density(&last.agents, cfg.grid)?;
        out.density("empirical_density", &empirical)?;
        let mut distances = Vec::new();
        if let Some(r) = &reference {
            for snap in &sim.snapshots {
                let (_, _, m) = r
                    .slices
                    .iter()
                    .min_by(|x, y| (x.0 - snap.t).abs().total_cmp(&(y.0 - snap.t).abs()))
                    .expect("nonempty");
                let d = montecarlo::density_distance(&montecarlo::empirical_density(&snap.agents, cfg.grid)?, m)?;
                distances.push((snap.t, d));
            }
            out.table(
                "distances.csv",
                &["t_fortnight", "agents", "tv_distance"],
                distances.iter().map(|(t, d)| vec![format!("{t:e}"), s.n_agents.to_string(), format!("{d:e}")]),
            )?;
        }
        println!("simulate: {} agents, {} jumps -> {}", s.n_agents, sim.jumps, dir.display());
        Ok(serde_json::json!({ "jumps": sim.jumps, "distances": distances }))
    })
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let samples = read_samples(&a.data)?;
    let fit: FitResult = match a.model {
        FitModel::PowerLaw => market::fit_power_law(&samples)?,
        FitModel::Exponential => market::fit_exponential(&samples)?,
        FitModel::LogRevenue => market::fit_log_revenue(&samples)?,
    };
    let text = serde_json::to_string_pretty(&fit)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, &text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_alpha_bar(dir: &Path) -> Result<Vec<(f64, f64)>> {
    let path = dir.join("alpha_bar.csv");
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    csv::Reader::from_reader(file)
        .records()
        .map(|r| {
            let r = r?;
            let f = |k: usize| r.get(k).and_then(|s| s.parse::<f64>().ok());
            f(0).zip(f(1)).ok_or_else(|| Error::domain("bad alpha_bar row"))
        })
        .collect()
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let m = load_run_manifest(&a.run)?;
    let cfg = m.config.clone();
    let g = cfg.grid;
    let mp = cfg.market;
    // (t, nodes, density, control, alpha_bar)
    let mut points: Vec<(f64, f64, DensityState, ScalarField, f64)> = Vec::new();
    let mut coefficients = Vec::new();
    match m.command.as_str() {
        "steady" => {
            let interior = ScalarField::load_csv(g, &a.run.join("m_inf.csv"))?;
            let state = DensityState::new(interior, load_eta(&a.run.join("eta_inf.csv"), g)?)?;
            let alpha = ScalarField::load_csv(g, &a.run.join("alpha_inf.csv"))?;
            let abar = m
                .convergence
                .get("alpha_bar_inf")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::domain("steady manifest lacks alpha_bar_inf"))?;
            let c = equilibrium::steady_coefficients(abar, &cfg.equilibrium, &cfg.protocol, &mp)?;
            points.push((c.t, c.nodes, state, alpha, abar));
            coefficients.push(c);
        }
        "transient" => {
            let r = load_reference(&a.run)?;
            let path = read_alpha_bar(&a.run)?;
            let dt = cfg.equilibrium.dt();
            for (t, control, density) in r.slices {
                let n = ((t / dt).round() as usize).min(path.len() - 1);
                points.push((t, mp.node_count(t), density, control, path[n].1));
            }
            coefficients = r.coefficients;
        }
        other => return Err(Error::domain(format!("cannot analyze a {other} run"))),
    }
    let dir = a.out.clone().unwrap_or_else(|| a.run.join("analysis"));
    with_manifest(&dir, "analyze", &cfg, |out| {
        let mut active = Vec::with_capacity(points.len());
        let mut rows = Vec::with_capacity(points.len());
        let mut min_margin = f64::INFINITY;
        let u0 = mp.utility(0.0)?;
        for (t, nodes, density, control, _) in &points {
            let (act, inact) = analysis::node_split(density, control, *nodes)?;
            active.push(act);
            rows.push(vec![format!("{t:e}"), format!("{nodes:e}"), format!("{act:e}"), format!("{inact:e}")]);
            for &alpha in control.values().iter().filter(|&&a| a > 0.0) {
                min_margin = min_margin.min(analysis::profitability(alpha, &mp)? - u0);
            }
        }
        out.table("active_nodes.csv", &["t_fortnight", "nodes", "active_nodes", "inactive_nodes"], rows)?;
        let times: Vec<f64> = points.iter().map(|p| p.0).collect();
        let abar: Vec<f64> = points.iter().map(|p| p.4).collect();
        let report = SecurityReport::new(&times, &active, &abar, &cfg.attack_fractions, &mp)?;
        let p = out.path("attack_cost.csv")?;
        report.save_csv(&p)?;
        out.json("security.json", &report)?;
        let blocks: Vec<u64> = coefficients.iter().map(|c| c.segments).collect();
        let lambda: Vec<f64> = coefficients.iter().map(|c| c.lambda).collect();
        let inflation = analysis::inflation_curve(&blocks, &lambda, &cfg.protocol)?;
        out.table(
            "inflation.csv",
            &["t_fortnight", "segments", "inflation_per_fortnight"],
            coefficients
                .iter()
                .zip(&inflation)
                .map(|(c, r)| vec![format!("{:e}", c.t), c.segments.to_string(), format!("{r:e}")]),
        )?;
        println!("analyze: {} time points -> {}", points.len(), dir.display());
        Ok(serde_json::json!({
            "time_points": points.len(),
            "min_active_profit_margin_usd": if min_margin.is_finite() { Some(min_margin) } else { None },
        }))
    })
}

fn load_eta(path: &Path, g: Grid2D) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let eta = csv::Reader::from_reader(file)
        .records()
        .map(|r| r?.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::domain("bad eta row")))
        .collect::<Result<Vec<f64>>>()?;
    if eta.len() != g.ny {
        return Err(Error::domain(format!("{}: expected {} rows", path.display(), g.ny)));
    }
    Ok(eta)
}
