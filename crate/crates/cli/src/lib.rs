//! Command implementations behind the `mhmp` binary.

pub mod scenario;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mhmp_core::engine::{
    block_instances, compare, hop_sweep, run, write_run_outputs, write_sweep_csv, EngineError, RunConfig, RunReport, SweepMetric,
    WrittenFiles,
};
use mhmp_core::schedulers::SchedulerKind;
use mhmp_core::solver::{convexity_probe, grid_oracle, refined_grid_oracle, solve_min_latency, SolverError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use scenario::ScenarioFile;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

/// Output directory used when neither `--out` nor `MHMP_OUT_DIR` is set.
pub const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Validation { message: String, keys: Vec<String> },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    /// A solver self-check exceeded its threshold.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    exit_code: u8,
    message: String,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    keys: &'a [String],
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } | CliError::Usage(_) | CliError::Io { .. } => EXIT_VALIDATION,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Check(_) | CliError::Solver(_) => EXIT_INTERNAL,
            CliError::Engine(e) => match e {
                EngineError::Config(_)
                | EngineError::Topology(_)
                | EngineError::Channel(_)
                | EngineError::Traffic(_)
                | EngineError::Trace(_)
                | EngineError::Csv(_) => EXIT_VALIDATION,
                _ => EXIT_INTERNAL,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_INFEASIBLE => "infeasible",
            EXIT_INTERNAL => "internal",
            _ if matches!(self, CliError::Usage(_)) => "usage",
            _ => "validation",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let keys = match self {
            CliError::Validation { keys, .. } => keys.as_slice(),
            _ => &[],
        };
        let body = ErrorBody { error: self.kind(), exit_code: self.exit_code(), message: self.to_string(), keys };
        serde_json::to_string(&body).expect("error body serializes")
    }
}

/// Scenario file plus the directory its relative paths resolve against.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioFile::load(path)?.to_run_config(base)
}

/// `--out` wins over `MHMP_OUT_DIR`, which wins over the default.
pub fn out_dir(flag: Option<PathBuf>, env: Option<PathBuf>) -> PathBuf {
    flag.or(env).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn write_outputs(report: &RunReport, dir: &Path) -> Result<WrittenFiles, CliError> {
    write_run_outputs(report, dir).map_err(|e| match e {
        EngineError::Io(source) => CliError::Io { path: dir.to_path_buf(), source },
        other => other.into(),
    })
}

/// Schemes that found no feasible decision in any block.
fn never_feasible(report: &RunReport) -> Option<CliError> {
    let dead: Vec<&str> =
        report.schemes.iter().filter(|s| s.blocks > 0 && s.infeasible_blocks == s.blocks).map(|s| s.scheme.name()).collect();
    (!dead.is_empty()).then(|| CliError::Infeasible(format!("no block met the latency budgets for: {}", dead.join(", "))))
}

/// Human-readable table of per-scheme averages with 95% half-widths.
pub fn summary_table(report: &RunReport) -> String {
    let services = report.config.scenario.services.len();
    let mut out = format!("{:<12}", "scheme");
    for q in 0..services {
        let _ = write!(out, " {:>20}", format!("latency_q{}_ms", q + 1));
    }
    let _ = writeln!(out, " {:>20} {:>10}", "power_mw", "infeasible");
    let cell = |e: &mhmp_core::engine::Estimate| match e.ci95_half_width {
        Some(h) => format!("{:.3} ± {:.3}", e.mean, h),
        None => format!("{:.3}", e.mean),
    };
    for s in &report.schemes {
        let _ = write!(out, "{:<12}", s.scheme.name());
        for q in 0..services {
            let _ = write!(out, " {:>20}", cell(&s.avg_latency_ms[q]));
        }
        let _ = writeln!(out, " {:>20} {:>10}", cell(&s.avg_power_mw), s.infeasible_blocks);
    }
    out
}

#[derive(Debug, Serialize)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs the scenario and writes every result file into `out`.
pub fn cmd_run(config: &RunConfig, schemes: &[SchedulerKind], seed: Option<u64>, out: &Path) -> Result<(RunOutcome, String), CliError> {
    let mut config = config.clone();
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if !schemes.is_empty() {
        config.schemes = schemes.to_vec();
    }
    let report = run(&config)?;
    let files = write_outputs(&report, out)?;
    let table = summary_table(&report);
    match never_feasible(&report) {
        Some(e) => Err(e),
        None => Ok((RunOutcome { out_dir: out.to_path_buf(), files }, table)),
    }
}

/// Like [`cmd_run`] but the scheme list is mandatory.
pub fn cmd_compare(config: &RunConfig, schemes: &[SchedulerKind], seed: Option<u64>, out: &Path) -> Result<(RunOutcome, String), CliError> {
    if schemes.is_empty() {
        return Err(CliError::Usage("compare needs at least one scheme".into()));
    }
    let mut config = config.clone();
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = compare(&config, schemes)?;
    let files = write_outputs(&report, out)?;
    let table = summary_table(&report);
    match never_feasible(&report) {
        Some(e) => Err(e),
        None => Ok((RunOutcome { out_dir: out.to_path_buf(), files }, table)),
    }
}

/// Parses `a..b` (inclusive) or a single layer count.
pub fn parse_hops(s: &str) -> Result<std::ops::RangeInclusive<usize>, String> {
    let bad = || format!("invalid --hops '{s}'; expected a..b with 1 <= a <= b, e.g. 1..5");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim(), b.trim().trim_start_matches('=')),
        None => (s.trim(), s.trim()),
    };
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// Writes `sweep.csv` into `out` and returns its contents.
pub fn cmd_sweep(
    config: &RunConfig,
    hops: std::ops::RangeInclusive<usize>,
    metric: SweepMetric,
    seed: Option<u64>,
    out: &Path,
) -> Result<(RunOutcome, String), CliError> {
    let mut config = config.clone();
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let rows = hop_sweep(&config, hops, metric)?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let path = out.join("sweep.csv");
    fs::write(&path, &csv).map_err(|source| CliError::Io { path: path.clone(), source })?;
    let text = String::from_utf8(csv).expect("csv output is utf-8");
    Ok((RunOutcome { out_dir: out.to_path_buf(), files: vec![path] }, text))
}

#[derive(Debug, Clone, Copy)]
pub struct OracleCheckOptions {
    pub resolution: f64,
    pub instances: usize,
    pub samples: usize,
    pub max_gap: f64,
    /// Convexity gates the result only when set.
    pub max_violation: Option<f64>,
    /// Objective evaluations allowed for a full grid before refinement is used.
    pub max_evaluations: f64,
}

impl Default for OracleCheckOptions {
    fn default() -> Self {
        OracleCheckOptions { resolution: 0.01, instances: 5, samples: 1000, max_gap: 0.01, max_violation: None, max_evaluations: 5e7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheckReport {
    pub instances: usize,
    pub resolution: f64,
    /// Largest `(solver − oracle) / oracle` over instances.
    pub max_gap: f64,
    pub max_path_violation: f64,
    pub max_objective_violation: f64,
    /// Instances where the full grid was too large and the refined search ran.
    pub refined_instances: usize,
    pub gap_threshold: f64,
    pub violation_threshold: Option<f64>,
    pub pass: bool,
}

/// Solver against the grid oracle, plus sampled convexity, on the first
/// blocks of the scenario's first replica.
pub fn cmd_oracle_check(config: &RunConfig, opts: &OracleCheckOptions) -> Result<OracleCheckReport, CliError> {
    if !(opts.resolution > 0.0 && opts.resolution <= 0.5) {
        return Err(CliError::Validation { message: "resolution must lie in (0, 0.5]".into(), keys: vec!["--resolution".into()] });
    }
    if opts.instances == 0 {
        return Err(CliError::Validation { message: "at least one instance is needed".into(), keys: vec!["--instances".into()] });
    }
    let insts = block_instances(config, 0, opts.instances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = OracleCheckReport {
        instances: insts.len(),
        resolution: opts.resolution,
        max_gap: f64::NEG_INFINITY,
        max_path_violation: 0.0,
        max_objective_violation: 0.0,
        refined_instances: 0,
        gap_threshold: opts.max_gap,
        violation_threshold: opts.max_violation,
        pass: false,
    };
    for inst in &insts {
        let solved = solve_min_latency(inst, &config.solver)?;
        let oracle = match grid_oracle(inst, opts.resolution, opts.max_evaluations) {
            Ok(r) => r,
            Err(SolverError::OracleCap { .. }) => {
                report.refined_instances += 1;
                refined_grid_oracle(inst, opts.resolution.max(0.05), opts.resolution, f64::INFINITY)?
            }
            Err(e) => return Err(e.into()),
        };
        report.max_gap = report.max_gap.max((solved.objective - oracle.objective) / oracle.objective);
        let c = convexity_probe(inst, opts.samples, &mut rng);
        report.max_path_violation = report.max_path_violation.max(c.max_path_violation);
        report.max_objective_violation = report.max_objective_violation.max(c.max_objective_violation);
    }
    report.pass = report.max_gap <= opts.max_gap
        && opts.max_violation.is_none_or(|v| report.max_path_violation <= v && report.max_objective_violation <= v);
    Ok(report)
}
