//! Command-line entry point: parses experiment configs, dispatches the
//! simulate / clt / estimate / diagnose subcommands, and writes all outputs.
//!
//! Exit codes are a stable contract: 0 success, 2 config or schema problem,
//! 3 model validation failure, 4 strict-mode acceptance failure, 5 solver
//! failure. Runs are stateless: identical (config, seed) pairs reproduce
//! identical output bytes at any worker count.

pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::birthdeath::{self, RangeCheckReport};
use crate::car::inference::{estimate_params, score_total};
use crate::harness::{
    self, assemble_report, level_init_stream, replicate_stream, BdLevel, CarLevel,
    HarnessError, LevelOptions, LevelReport, RegimeSchedule,
};
use crate::numerics::newton::{self, NewtonError, NewtonOptions, NewtonTraceEntry};
use crate::numerics::RngStream;
use config::{BuildError, ConfigError, ExperimentConfig, ModelConfig};
use io::{IoError, Meta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_STRICT: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("model validation error: {0}")]
    Validation(String),
    #[error("acceptance thresholds failed under --strict")]
    StrictFailure,
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::StrictFailure => EXIT_STRICT,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::RegimeShape(_) | HarnessError::BadExponent { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "stclt",
    version,
    about = "Simulation, estimation and Monte Carlo normality diagnostics for conditionally centered space-time random fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonOpts {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicate worker threads (overrides config and STCLT_WORKERS).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one path and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Output CSV path (defaults to <out>/path.csv).
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Run the full regime ladder and write the normality report.
    Clt {
        #[command(flatten)]
        common: CommonOpts,
        /// Exit 4 when the acceptance verdicts fail.
        #[arg(long)]
        strict: bool,
    },
    /// Solve the estimating equations on a simulated data file.
    Estimate {
        #[command(flatten)]
        common: CommonOpts,
        /// Data CSV produced by `simulate` with the same config.
        #[arg(long)]
        data: PathBuf,
        /// Initial parameter values (2 for the autoregression, 3 for the
        /// birth-death score); defaults to the generating values.
        #[arg(long, num_args = 2..=3, allow_negative_numbers = true)]
        init: Option<Vec<f64>>,
    },
    /// Mixing, moment and variance diagnostics.
    Diagnose {
        #[command(flatten)]
        common: CommonOpts,
    },
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    run_command(cli.command)
}

pub fn run_command(command: Command) -> i32 {
    let result = match command {
        Command::Simulate { common, path } => execute(common, |env| cmd_simulate(env, path)),
        Command::Clt { common, strict } => execute(common, |env| cmd_clt(env, strict)),
        Command::Estimate { common, data, init } => {
            execute(common, |env| cmd_estimate(env, &data, init))
        }
        Command::Diagnose { common } => execute(common, cmd_diagnose),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("stclt: {e}");
            e.exit_code()
        }
    }
}

/// Resolved execution environment shared by all commands.
pub struct Env {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub meta: Meta,
}

impl Env {
    pub fn master_stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn execute<F>(common: CommonOpts, body: F) -> Result<(), CliError>
where
    F: FnOnce(&Env) -> Result<(), CliError> + Send,
{
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let seed = config.seed;
    let out_dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
    let workers = common
        .workers
        .or(config.workers)
        .or_else(|| {
            std::env::var("STCLT_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    let meta = Meta::new(&config, seed);
    let env = Env {
        config,
        seed,
        out_dir,
        meta,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| body(&env))
}

fn car_horizon(car: &config::CarConfig) -> Result<usize, CliError> {
    car.horizon.ok_or_else(|| {
        CliError::Config("car config needs a horizon for single-path commands".into())
    })
}

fn cmd_simulate(env: &Env, path_flag: Option<PathBuf>) -> Result<(), CliError> {
    let out = path_flag.unwrap_or_else(|| env.out_path("path.csv"));
    let level_stream = env.master_stream().child(0);
    let init = level_init_stream(&level_stream);
    let rep = replicate_stream(&level_stream, 0);
    match &env.config.model {
        ModelConfig::Car(car) => {
            let spec = car.build(None)?;
            let horizon = car_horizon(car)?;
            let x0 = car.initial_state(spec.n(), &init)?;
            let path = spec
                .simulate_path(&x0, horizon, &rep)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            io::write_car_path_csv(&out, &env.meta, &path)?;
        }
        ModelConfig::Birthdeath(bd) => {
            let spec = bd.build(None, None)?;
            let x0 = bd.initial_pattern(&spec, &init)?;
            let path = birthdeath::simulate_path(&spec, &x0, &rep)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            io::write_bd_path_csv(&out, &env.meta, &path)?;
        }
    }
    Ok(())
}

fn level_options(env: &Env, schedule: &RegimeSchedule, dim: usize, lattice_size: usize) -> LevelOptions {
    let (a, b) = schedule.exponents(dim);
    LevelOptions {
        replicates: schedule.replicates,
        trunc_a: a,
        trunc_b: b,
        epsilon: env.config.epsilon.unwrap_or(0.0),
        compute_pairs: lattice_size <= 400,
        decay_lags: 30,
    }
}

fn default_ks_threshold(env: &Env) -> f64 {
    env.config.ks_threshold.unwrap_or(0.05)
}

fn cmd_clt(env: &Env, strict: bool) -> Result<(), CliError> {
    let schedule = env
        .config
        .schedule()
        .ok_or_else(|| CliError::Config("clt needs a regime stanza".into()))?;
    let master = env.master_stream();
    let report = match &env.config.model {
        ModelConfig::Car(car) => {
            let dim = match &car.lattice {
                config::LatticeConfig::Grid { dim, .. } => *dim,
                config::LatticeConfig::Window { lower, .. } => lower.len(),
            };
            schedule.validate(dim)?;
            // validate every level before any simulation
            let mut levels = Vec::new();
            for (idx, level) in schedule.levels.iter().enumerate() {
                let spec = car.build(Some(level.size))?;
                if !spec.is_stable() {
                    return Err(HarnessError::UnstableSpec {
                        radius: spec.companion_radius(),
                    }
                    .into());
                }
                let level_stream = master.child(idx as u64);
                let x0 = car.initial_state(spec.n(), &level_init_stream(&level_stream))?;
                levels.push((
                    CarLevel {
                        spec,
                        x0,
                        horizon: level.horizon,
                    },
                    level_stream,
                ));
            }
            let mut reports: Vec<LevelReport> = Vec::new();
            for (idx, (level, stream)) in levels.iter().enumerate() {
                let opts = level_options(env, &schedule, dim, level.spec.n());
                reports.push(harness::run_car_level(level, &opts, stream, idx)?);
            }
            assemble_report("car", schedule.regime, reports, default_ks_threshold(env))
        }
        ModelConfig::Birthdeath(bd) => {
            schedule.validate(2)?;
            let mut levels = Vec::new();
            for (idx, level) in schedule.levels.iter().enumerate() {
                let spec = bd.build(Some(level.size), Some(level.horizon))?;
                let level_stream = master.child(idx as u64);
                let x0 = bd.initial_pattern(&spec, &level_init_stream(&level_stream))?;
                levels.push((BdLevel { spec, x0 }, level_stream));
            }
            let mut reports: Vec<LevelReport> = Vec::new();
            for (idx, (level, stream)) in levels.iter().enumerate() {
                let opts = level_options(env, &schedule, 2, level.spec.window_cover().len());
                reports.push(harness::run_bd_level(level, &opts, stream, idx)?);
            }
            assemble_report(
                "birthdeath",
                schedule.regime,
                reports,
                default_ks_threshold(env),
            )
        }
    };
    io::write_json(&env.out_path("clt_report.json"), &env.meta, &report)?;
    io::write_clt_summary_csv(&env.out_path("clt_summary.csv"), &env.meta, &report)?;
    io::write_clt_qq_csv(&env.out_path("clt_qq.csv"), &env.meta, &report)?;
    for level in &report.levels {
        for c in &level.components {
            println!(
                "level {} component {}: ks_d={:.5} ks_p={:.4}",
                level.level, c.component, c.ks_d, c.ks_p
            );
        }
    }
    if strict && !report.verdicts.pass {
        return Err(CliError::StrictFailure);
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateDocument {
    model: String,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_alpha_b_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_s0_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_s1_hat: Option<f64>,
    iterations: usize,
    score_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    trace: Vec<NewtonTraceEntry>,
}

fn cmd_estimate(env: &Env, data: &Path, init: Option<Vec<f64>>) -> Result<(), CliError> {
    let out = env.out_path("estimate.json");
    let level_stream = env.master_stream().child(0);
    let init_stream = level_init_stream(&level_stream);
    match &env.config.model {
        ModelConfig::Car(car) => {
            let spec = car.build(None)?;
            let horizon = car_horizon(car)?;
            let x0 = car.initial_state(spec.n(), &init_stream)?;
            let path = io::read_car_path_csv(data, spec.n(), horizon, x0)?;
            let init_pair = match init.as_deref() {
                Some([b, g]) => (*b, *g),
                Some(other) => {
                    return Err(CliError::Config(format!(
                        "car estimation needs --init BETA GAMMA, got {} values",
                        other.len()
                    )))
                }
                None => (car.beta, car.gamma),
            };
            match estimate_params(&spec, &path, init_pair) {
                Ok(est) => {
                    let doc = EstimateDocument {
                        model: "car".into(),
                        converged: est.converged,
                        beta_hat: Some(est.beta_hat),
                        gamma_hat: Some(est.gamma_hat),
                        log_alpha_b_hat: None,
                        theta_s0_hat: None,
                        theta_s1_hat: None,
                        iterations: est.iterations,
                        score_norm: est.score_norm,
                        error: None,
                        trace: est.trace,
                    };
                    io::write_json(&out, &env.meta, doc)?;
                    Ok(())
                }
                Err(err) => {
                    let doc = EstimateDocument {
                        model: "car".into(),
                        converged: false,
                        beta_hat: None,
                        gamma_hat: None,
                        log_alpha_b_hat: None,
                        theta_s0_hat: None,
                        theta_s1_hat: None,
                        iterations: err.newton_trace().len().saturating_sub(1),
                        score_norm: err
                            .newton_trace()
                            .last()
                            .map(|t| t.residual_norm)
                            .unwrap_or(f64::NAN),
                        error: Some(err.to_string()),
                        trace: err.newton_trace().to_vec(),
                    };
                    io::write_json(&out, &env.meta, doc)?;
                    Err(CliError::Solver(err.to_string()))
                }
            }
        }
        ModelConfig::Birthdeath(bd) => {
            let spec = bd.build(None, None)?;
            let path = io::read_bd_path_csv(data, spec.spec().horizon)?;
            spec.check_inside_region(&path.x0)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let theta0 = match init.as_deref() {
                Some([a, s0, s1]) => birthdeath::BdTheta {
                    log_alpha_b: *a,
                    s0: *s0,
                    s1: *s1,
                },
                Some(other) => {
                    return Err(CliError::Config(format!(
                        "birth-death estimation needs --init LOG_ALPHA S0 S1, got {} values",
                        other.len()
                    )))
                }
                None => spec.generating_theta(),
            };
            let scale = (spec.spec().horizon * spec.window_cover().len()) as f64;
            let opts = NewtonOptions {
                residual_tol: 1e-8 * scale,
                ..NewtonOptions::default()
            };
            let f = |params: &[f64]| {
                let theta = birthdeath::BdTheta::from_slice(params);
                let field =
                    birthdeath::score_field(&spec, &path, &theta).map_err(|e| e.to_string())?;
                Ok(score_total(&field))
            };
            match newton::solve(f, &theta0.as_array(), &opts) {
                Ok(res) => {
                    let doc = EstimateDocument {
                        model: "birthdeath".into(),
                        converged: res.converged,
                        beta_hat: None,
                        gamma_hat: None,
                        log_alpha_b_hat: Some(res.params[0]),
                        theta_s0_hat: Some(res.params[1]),
                        theta_s1_hat: Some(res.params[2]),
                        iterations: res.iterations,
                        score_norm: res.residual_norm,
                        error: None,
                        trace: res.trace,
                    };
                    io::write_json(&out, &env.meta, doc)?;
                    Ok(())
                }
                Err(err) => {
                    let trace = match &err {
                        NewtonError::InitialEvaluation(_) => Vec::new(),
                        e => e.trace().to_vec(),
                    };
                    let doc = EstimateDocument {
                        model: "birthdeath".into(),
                        converged: false,
                        beta_hat: None,
                        gamma_hat: None,
                        log_alpha_b_hat: None,
                        theta_s0_hat: None,
                        theta_s1_hat: None,
                        iterations: trace.len().saturating_sub(1),
                        score_norm: trace.last().map(|t| t.residual_norm).unwrap_or(f64::NAN),
                        error: Some(err.to_string()),
                        trace,
                    };
                    io::write_json(&out, &env.meta, doc)?;
                    Err(CliError::Solver(err.to_string()))
                }
            }
        }
    }
}

#[derive(Serialize)]
struct DiagnoseDocument {
    model: String,
    level: LevelReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    range_check: Option<RangeCheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    range_check_error: Option<String>,
}

fn cmd_diagnose(env: &Env) -> Result<(), CliError> {
    let master = env.master_stream();
    let level_stream = master.child(0);
    let replicates = env.config.replicates.unwrap_or(500);
    let doc = match &env.config.model {
        ModelConfig::Car(car) => {
            let spec = car.build(None)?;
            if !spec.is_stable() {
                return Err(HarnessError::UnstableSpec {
                    radius: spec.companion_radius(),
                }
                .into());
            }
            let dim = spec.spec().lattice.dim();
            let horizon = car_horizon(car)?;
            let x0 = car.initial_state(spec.n(), &level_init_stream(&level_stream))?;
            let (a, b) = crate::harness::default_truncation_exponents(dim);
            let n = spec.n();
            let opts = LevelOptions {
                replicates,
                trunc_a: a,
                trunc_b: b,
                epsilon: env.config.epsilon.unwrap_or(0.0),
                compute_pairs: n <= 400,
                decay_lags: 30,
            };
            let level = CarLevel { spec, x0, horizon };
            let report = harness::run_car_level(&level, &opts, &level_stream, 0)?;
            DiagnoseDocument {
                model: "car".into(),
                level: report,
                range_check: None,
                range_check_error: None,
            }
        }
        ModelConfig::Birthdeath(bd) => {
            let spec = bd.build(None, None)?;
            let x0 = bd.initial_pattern(&spec, &level_init_stream(&level_stream))?;
            let n = spec.window_cover().len();
            let (a, b) = crate::harness::default_truncation_exponents(2);
            let opts = LevelOptions {
                replicates,
                trunc_a: a,
                trunc_b: b,
                epsilon: env.config.epsilon.unwrap_or(0.0),
                compute_pairs: n <= 400,
                decay_lags: 12,
            };
            let level = BdLevel {
                spec: spec.clone(),
                x0: x0.clone(),
            };
            let report = harness::run_bd_level(&level, &opts, &level_stream, 0)?;
            // independence range check on a dedicated replicate branch
            let range_stream = master.child(1);
            let range_reps = replicates.max(500);
            let mut paths = Vec::with_capacity(range_reps);
            let mut sim_err: Option<String> = None;
            harness::map_fold_replicates(
                range_reps,
                |rep| birthdeath::simulate_path(&spec, &x0, &replicate_stream(&range_stream, rep)),
                |_, res| match res {
                    Ok(p) => paths.push(p),
                    Err(e) => {
                        if sim_err.is_none() {
                            sim_err = Some(e.to_string());
                        }
                    }
                },
            );
            let (range_check, range_check_error) = if let Some(e) = sim_err {
                (None, Some(e))
            } else {
                match birthdeath::independence_range_check(&spec, &paths) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            DiagnoseDocument {
                model: "birthdeath".into(),
                level: report,
                range_check,
                range_check_error,
            }
        }
    };
    io::write_json(&env.out_path("diagnose.json"), &env.meta, doc)?;
    Ok(())
}
