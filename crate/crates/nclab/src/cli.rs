//! JSON config ingestion and the command-line front end.
//!
//! Subcommands:
//! - `check`: per-criterion stabilizability verdicts as JSON
//! - `region`: classification CSV over a grid of log-magnitude pairs
//! - `theta`: the tilt-equation root as JSON
//! - `simulate`: closed-loop decay curves as CSV (or JSON)
//! - `sched-stats`: scheduler round log CSV plus round-moment estimates
//!
//! Exit codes: 0 success, 2 configuration/schema errors, 3 numerical
//! errors (no root, cap exceeded, divergent moment, infeasibility).

use crate::conditions::{
    self, adaptive_feasible, necessity_holds, optimal2d_condition, region_sweep, solve_theta,
    tdma_sufficient, ConditionsError,
};
use crate::model::{ChannelParams, EigenBlock, ModelError, SystemSpec};
use crate::sched::SchedulerConfig;
use crate::sim;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use thiserror::Error;

/// Search cap used when quotas or `n1` are auto-derived from a config.
const AUTO_QUOTA_CAP: u32 = 64;

const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("config validation error: {0}")]
    Validation(#[from] ModelError),
    #[error("numerical error: {0}")]
    Numerical(ConditionsError),
    #[error("scheduler configuration: {0}")]
    Scheduler(#[from] crate::sched::SchedError),
    #[error("simulation error: {0}")]
    Sim(#[from] sim::SimError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<ConditionsError> for CliError {
    fn from(e: ConditionsError) -> Self {
        match e {
            ConditionsError::OrderViolation { .. } => CliError::Schema {
                path: "ln_l1/ln_l2".into(),
                message: e.to_string(),
            },
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) | CliError::Sim(_) => 3,
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Config schema (strict: unknown keys are rejected)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    version: Option<u32>,
    system: RawSystem,
    channel: RawChannel,
    #[serde(default)]
    scheduler: Option<RawScheduler>,
    #[serde(default)]
    sim: Option<RawSim>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    eigenvalues: Vec<RawEigen>,
    input_vector: Vec<f64>,
    #[serde(default)]
    initial_covariance: Option<Vec<Vec<f64>>>,
}

/// Either a bare log-magnitude or the full block description.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawEigen {
    Bare(f64),
    Full {
        ln_magnitude: f64,
        #[serde(default)]
        complex: bool,
        #[serde(default = "default_multiplicity")]
        multiplicity: usize,
    },
}

fn default_multiplicity() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    power: f64,
    noise_var: f64,
    drop_prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduler {
    kind: RawKind,
    #[serde(default)]
    quotas: Option<Vec<u32>>,
    #[serde(default)]
    n1: Option<u32>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    FixedTdma,
    AdaptiveTdma,
    Optimal2d,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(default = "default_horizon")]
    horizon: u64,
    #[serde(default = "default_trials")]
    trials: u64,
    #[serde(default)]
    seed: u64,
}

fn default_horizon() -> u64 {
    600
}

fn default_trials() -> u64 {
    200
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: String,
    #[serde(default)]
    format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Simulation settings after defaulting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
}

/// Output settings after defaulting.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub path: PathBuf,
    pub format: OutputFormat,
}

/// A fully validated run configuration with every default applied and
/// scheduler parameters derived where omitted.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub channel: ChannelParams,
    pub scheduler: SchedulerConfig,
    pub sim: SimSettings,
    pub output: OutputSettings,
}

fn ensure_finite(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Schema {
            path: path.into(),
            message: format!("value {v} is not finite"),
        })
    }
}

/// Parses and validates a JSON config document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        if inner.is_syntax() || inner.is_eof() {
            CliError::Parse(inner.to_string())
        } else {
            CliError::Schema {
                path: e.path().to_string(),
                message: inner.to_string(),
            }
        }
    })?;

    if let Some(v) = raw.version {
        if v != CONFIG_VERSION {
            return Err(CliError::Schema {
                path: "version".into(),
                message: format!("unsupported config version {v}, expected {CONFIG_VERSION}"),
            });
        }
    }

    ensure_finite("channel.power", raw.channel.power)?;
    ensure_finite("channel.noise_var", raw.channel.noise_var)?;
    ensure_finite("channel.drop_prob", raw.channel.drop_prob)?;
    if !(0.0..1.0).contains(&raw.channel.drop_prob) {
        return Err(CliError::Schema {
            path: "channel.drop_prob".into(),
            message: format!("must lie in [0, 1), got {}", raw.channel.drop_prob),
        });
    }
    let channel = ChannelParams::new(
        raw.channel.power,
        raw.channel.noise_var,
        raw.channel.drop_prob,
    )?;

    let mut blocks = Vec::with_capacity(raw.system.eigenvalues.len());
    for (i, e) in raw.system.eigenvalues.iter().enumerate() {
        let (ln, complex, mult) = match e {
            RawEigen::Bare(ln) => (*ln, false, 1),
            RawEigen::Full {
                ln_magnitude,
                complex,
                multiplicity,
            } => (*ln_magnitude, *complex, *multiplicity),
        };
        ensure_finite(&format!("system.eigenvalues[{i}]"), ln)?;
        blocks.push(EigenBlock::new(ln, complex, mult));
    }
    for (i, v) in raw.system.input_vector.iter().enumerate() {
        ensure_finite(&format!("system.input_vector[{i}]"), *v)?;
    }
    let covariance = match &raw.system.initial_covariance {
        None => None,
        Some(rows) => {
            let n = rows.len();
            let mut m = nalgebra::DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(CliError::Schema {
                        path: format!("system.initial_covariance[{i}]"),
                        message: format!("row has {} entries, expected {n}", row.len()),
                    });
                }
                for (j, v) in row.iter().enumerate() {
                    ensure_finite(&format!("system.initial_covariance[{i}][{j}]"), *v)?;
                    m[(i, j)] = *v;
                }
            }
            Some(m)
        }
    };

    let system = SystemSpec::new(blocks, &raw.system.input_vector, covariance, None)?;

    let scheduler = derive_scheduler(raw.scheduler.as_ref(), &system, &channel)?;

    let sim = match raw.sim {
        Some(s) => SimSettings {
            horizon: s.horizon,
            trials: s.trials,
            seed: s.seed,
        },
        None => SimSettings {
            horizon: default_horizon(),
            trials: default_trials(),
            seed: 0,
        },
    };

    let output = match raw.output {
        Some(o) => OutputSettings {
            path: PathBuf::from(o.path),
            format: o.format,
        },
        None => OutputSettings {
            path: PathBuf::from("decay.csv"),
            format: OutputFormat::Csv,
        },
    };

    Ok(RunConfig {
        system,
        channel,
        scheduler,
        sim,
        output,
    })
}

/// Fills in scheduler parameters: quotas via the quota search, `n1` via
/// the contraction scan on the two dominant log-magnitudes.
fn derive_scheduler(
    raw: Option<&RawScheduler>,
    system: &SystemSpec,
    channel: &ChannelParams,
) -> Result<SchedulerConfig, CliError> {
    let kind = raw.map_or(RawKind::AdaptiveTdma, |s| s.kind);
    let quotas = raw.and_then(|s| s.quotas.clone());
    let n1 = raw.and_then(|s| s.n1);
    match kind {
        RawKind::FixedTdma => Ok(SchedulerConfig::FixedTdma {
            budgets: quotas.unwrap_or_else(|| vec![1; system.state_dim()]),
        }),
        RawKind::AdaptiveTdma => {
            let quotas = match quotas {
                Some(q) => q,
                None => conditions::quota_search(system, channel, AUTO_QUOTA_CAP)?,
            };
            Ok(SchedulerConfig::AdaptiveTdma { quotas })
        }
        RawKind::Optimal2d => {
            let n1 = match n1 {
                Some(n) => n,
                None => {
                    let coords = system.coordinate_log_magnitudes();
                    if coords.len() != 2 {
                        return Err(CliError::Schema {
                            path: "scheduler.n1".into(),
                            message: "optimal2d needs a two-dimensional system".into(),
                        });
                    }
                    let sol = solve_theta(coords[0], coords[1], channel)?;
                    conditions::min_n1_for_contraction(&sol, coords[0], channel, AUTO_QUOTA_CAP)?
                }
            };
            Ok(SchedulerConfig::Optimal2d { n1 })
        }
    }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "nclab",
    about = "Schedulers and stabilizability analysis for control over lossy power-constrained channels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ChannelFlags {
    /// Packet drop probability ε
    #[arg(long)]
    eps: f64,
    /// Average power budget P
    #[arg(long, default_value_t = 1.0)]
    power: f64,
    /// Noise variance σ_n²
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

impl ChannelFlags {
    fn to_params(&self) -> Result<ChannelParams, CliError> {
        Ok(ChannelParams::new(self.power, self.noise, self.eps)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate all stabilizability criteria for one system
    Check {
        /// JSON config file (alternative to --l1/--l2)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dominant log-magnitude ln|λ1| (with --l2, instead of a config)
        #[arg(long, requires = "l2")]
        l1: Option<f64>,
        /// Second log-magnitude ln|λ2|
        #[arg(long, requires = "l1")]
        l2: Option<f64>,
        /// Packet drop probability ε (overrides the config value)
        #[arg(long)]
        eps: Option<f64>,
        /// Average power budget P (overrides the config value)
        #[arg(long)]
        power: Option<f64>,
        /// Noise variance σ_n² (overrides the config value)
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Classify a grid of log-magnitude pairs by all four criteria
    Region {
        #[command(flatten)]
        channel: ChannelFlags,
        /// Upper edge of the grid in ln|λ|
        #[arg(long = "ln-max", default_value_t = 0.12)]
        ln_max: f64,
        /// Grid resolution per axis
        #[arg(long, default_value_t = 200)]
        grid: usize,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the tilt equation for a pair of log-magnitudes
    Theta {
        /// Dominant log-magnitude ln|λ1|
        #[arg(long)]
        l1: f64,
        /// Second log-magnitude ln|λ2|
        #[arg(long)]
        l2: f64,
        #[command(flatten)]
        channel: ChannelFlags,
    },
    /// Run closed-loop Monte Carlo and write decay curves
    Simulate {
        /// JSON config file
        #[arg(long)]
        config: PathBuf,
        /// Output path (overrides the config value)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate scheduler round statistics and moments
    SchedStats {
        /// JSON config file
        #[arg(long)]
        config: PathBuf,
        /// Number of independent rounds to simulate
        #[arg(long, default_value_t = 10_000)]
        rounds: u64,
        /// Round-log CSV path (overrides the config value)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_config(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Check {
            config,
            l1,
            l2,
            eps,
            power,
            noise,
        } => {
            let (system, channel) = match (config, l1, l2) {
                (Some(path), None, None) => {
                    let cfg = read_config(&path)?;
                    let channel = match (eps, power, noise) {
                        (None, None, None) => cfg.channel,
                        _ => ChannelParams::new(
                            power.unwrap_or(cfg.channel.power()),
                            noise.unwrap_or(cfg.channel.noise_var()),
                            eps.unwrap_or(cfg.channel.drop_prob()),
                        )?,
                    };
                    (cfg.system, channel)
                }
                (None, Some(l1), Some(l2)) => {
                    let eps = eps.ok_or_else(|| CliError::Schema {
                        path: "--eps".into(),
                        message: "required when no config file is given".into(),
                    })?;
                    let channel =
                        ChannelParams::new(power.unwrap_or(1.0), noise.unwrap_or(1.0), eps)?;
                    (SystemSpec::magnitude_pair(l1, l2)?, channel)
                }
                _ => {
                    return Err(CliError::Schema {
                        path: "--config/--l1/--l2".into(),
                        message: "give either a config file or both --l1 and --l2".into(),
                    })
                }
            };
            println!("{}", check_json(&system, &channel)?);
            Ok(())
        }
        Command::Region {
            channel,
            ln_max,
            grid,
            out,
        } => {
            if grid < 2 {
                return Err(CliError::Schema {
                    path: "--grid".into(),
                    message: "resolution must be at least 2".into(),
                });
            }
            if !(ln_max.is_finite() && ln_max > 0.0) {
                return Err(CliError::Schema {
                    path: "--ln-max".into(),
                    message: "must be positive".into(),
                });
            }
            let report = region_sweep(&channel.to_params()?, ln_max, grid);
            write_file(&out, report.to_csv_string().as_bytes())
        }
        Command::Theta { l1, l2, channel } => {
            let sol = solve_theta(l1, l2, &channel.to_params()?)?;
            println!(
                "{}",
                serde_json::json!({
                    "theta": sol.theta,
                    "phi": sol.phi,
                    "b": sol.drift,
                    "residual": sol.residual,
                })
            );
            Ok(())
        }
        Command::Simulate { config, out } => {
            let cfg = read_config(&config)?;
            let curves = sim::montecarlo_moments(
                &cfg.system,
                &cfg.channel,
                &cfg.scheduler,
                cfg.sim.trials,
                cfg.sim.horizon,
                cfg.sim.seed,
            )?;
            let path = out.unwrap_or(cfg.output.path);
            match cfg.output.format {
                OutputFormat::Csv => write_file(&path, curves.to_csv_string().as_bytes()),
                OutputFormat::Json => {
                    let doc = serde_json::json!({
                        "times": curves.times,
                        "mean_moments": curves.mean_moments,
                        "mean_sq_norm": curves.mean_sq_norm,
                        "diverged_fraction": curves.diverged_fraction,
                        "trend_slopes": curves.trend_slopes,
                    });
                    write_file(&path, doc.to_string().as_bytes())
                }
            }
        }
        Command::SchedStats {
            config,
            rounds,
            out,
        } => {
            let cfg = read_config(&config)?;
            let coords = cfg.system.coordinate_log_magnitudes();
            let stats = sim::scheduler_moment_mc(
                &cfg.scheduler,
                &coords,
                &cfg.channel,
                rounds,
                cfg.sim.seed,
            )?;
            let path = out.unwrap_or(cfg.output.path);
            let mut buf = Vec::new();
            stats
                .scheduler
                .write_round_csv(&mut buf)
                .expect("write to vec");
            write_file(&path, &buf)?;
            println!(
                "{}",
                serde_json::json!({
                    "rounds": stats.rounds,
                    "round_moments": stats.round_moments,
                    "single_phase": stats.single_phase,
                })
            );
            Ok(())
        }
    }
}

/// The `check` verdict document.
fn check_json(system: &SystemSpec, channel: &ChannelParams) -> Result<String, CliError> {
    let necessity = necessity_holds(system, channel);
    let alpha = adaptive_feasible(system, channel);
    let blocks = system.blocks();
    let optimal2d = if blocks.len() == 2
        && blocks
            .iter()
            .all(|b| !b.is_complex() && b.algebraic_multiplicity() == 1)
    {
        Some(optimal2d_condition(
            blocks[0].log_magnitude(),
            blocks[1].log_magnitude(),
            channel,
        )?)
    } else {
        None
    };
    Ok(serde_json::json!({
        "necessary": necessity.holds,
        "tdma": tdma_sufficient(system, channel),
        "adaptive": {
            "feasible": alpha.feasible,
            "alpha_min": alpha.minimum_fractions,
        },
        "optimal2d": optimal2d,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {"eigenvalues": [0.05, 0.03], "input_vector": [1, 1]},
        "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7}
    }"#;

    #[test]
    fn minimal_config_fills_defaults_and_derives_quotas() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.system.state_dim(), 2);
        assert_eq!(
            cfg.scheduler,
            SchedulerConfig::AdaptiveTdma { quotas: vec![2, 1] }
        );
        assert_eq!(cfg.sim.horizon, 600);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.channel.delta(), 0.5);
        // identity covariance by default
        assert_eq!(cfg.system.initial_covariance()[(0, 0)], 1.0);
        assert_eq!(cfg.system.initial_covariance()[(0, 1)], 0.0);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = r#"{
            "system": {"eigenvalues": [0.05], "input_vector": [1], "fading": true},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7}
        }"#;
        match parse_config(text) {
            Err(CliError::Schema { path, message }) => {
                assert!(path.contains("system"), "path was {path}");
                assert!(message.contains("fading"), "message was {message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_drop_prob_is_schema_error() {
        let text = r#"{
            "system": {"eigenvalues": [0.05], "input_vector": [1]},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 1.2}
        }"#;
        match parse_config(text) {
            Err(CliError::Schema { path, .. }) => assert_eq!(path, "channel.drop_prob"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_config("{not json"),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn validation_errors_delegate_to_model() {
        let text = r#"{
            "system": {"eigenvalues": [0.03, 0.05], "input_vector": [1, 1]},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7}
        }"#;
        assert!(matches!(
            parse_config(text),
            Err(CliError::Validation(ModelError::NotSorted(_)))
        ));
    }

    #[test]
    fn infeasible_auto_quota_is_numerical_error() {
        let text = r#"{
            "system": {"eigenvalues": [0.085, 0.001], "input_vector": [1, 1]},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7}
        }"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(matches!(
            err,
            CliError::Numerical(ConditionsError::Infeasible)
        ));
    }

    #[test]
    fn optimal2d_n1_auto_derivation() {
        let text = r#"{
            "system": {"eigenvalues": [0.05, 0.03], "input_vector": [1, 1]},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7},
            "scheduler": {"kind": "optimal2d"}
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.scheduler, SchedulerConfig::Optimal2d { n1: 10 });
    }

    #[test]
    fn unsupported_version_rejected() {
        let text = r#"{
            "version": 2,
            "system": {"eigenvalues": [0.05], "input_vector": [1]},
            "channel": {"power": 1.0, "noise_var": 1.0, "drop_prob": 0.7}
        }"#;
        assert!(matches!(
            parse_config(text),
            Err(CliError::Schema { path, .. }) if path == "version"
        ));
    }

    #[test]
    fn check_json_respects_containment() {
        let ch = ChannelParams::new(1.0, 1.0, 0.7).unwrap();
        for (l1, l2) in [(0.03, 0.02), (0.05, 0.04), (0.075, 0.012), (0.1, 0.09)] {
            let spec = SystemSpec::magnitude_pair(l1, l2).unwrap();
            let doc: serde_json::Value =
                serde_json::from_str(&check_json(&spec, &ch).unwrap()).unwrap();
            let tdma = doc["tdma"].as_bool().unwrap();
            let adaptive = doc["adaptive"]["feasible"].as_bool().unwrap();
            let optimal = doc["optimal2d"].as_bool().unwrap();
            let necessary = doc["necessary"].as_bool().unwrap();
            assert!(!tdma || adaptive);
            assert!(!adaptive || optimal);
            assert!(!optimal || necessary);
        }
    }
}
