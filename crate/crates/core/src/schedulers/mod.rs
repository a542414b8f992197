//! Per-block decision policies: fixed single path, path selection, two-path,
//! full multi-path, and the adaptive controller.

mod allp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::{block_metrics, link_rates, Decision, PowerRule};
use crate::solver::{
    evaluate_fixed_power, solve_min_latency, solve_min_latency_on, solve_min_power, solve_min_power_on, Mode, PathSet,
    ProblemInstance, SolverError, SolverOptions, SolverResult, Status,
};
use crate::topology::{PathId, Topology};

pub use allp::{allp_step, AllpConfig, AllpMode, AllpState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("unknown scheme '{name}'; valid schemes: {valid}")]
    UnknownKind { name: String, valid: String },
    #[error("invalid scheduler setting: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The compared policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    SpLl,
    SpLp,
    Ps1Ll,
    Ps2Ll,
    Ps1Lp,
    Ps2Lp,
    TwoPathLl,
    MhmpLl,
    MhmpLp,
    Allp,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 10] = [
        SchedulerKind::SpLl,
        SchedulerKind::SpLp,
        SchedulerKind::Ps1Ll,
        SchedulerKind::Ps2Ll,
        SchedulerKind::Ps1Lp,
        SchedulerKind::Ps2Lp,
        SchedulerKind::TwoPathLl,
        SchedulerKind::MhmpLl,
        SchedulerKind::MhmpLp,
        SchedulerKind::Allp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::SpLl => "sp_ll",
            SchedulerKind::SpLp => "sp_lp",
            SchedulerKind::Ps1Ll => "ps1_ll",
            SchedulerKind::Ps2Ll => "ps2_ll",
            SchedulerKind::Ps1Lp => "ps1_lp",
            SchedulerKind::Ps2Lp => "ps2_lp",
            SchedulerKind::TwoPathLl => "two_path_ll",
            SchedulerKind::MhmpLl => "mhmp_ll",
            SchedulerKind::MhmpLp => "mhmp_lp",
            SchedulerKind::Allp => "allp",
        }
    }

    /// The program the scheme optimizes; `None` for the adaptive controller.
    pub fn mode(self) -> Option<Mode> {
        match self {
            SchedulerKind::SpLl | SchedulerKind::Ps1Ll | SchedulerKind::Ps2Ll | SchedulerKind::TwoPathLl | SchedulerKind::MhmpLl => {
                Some(Mode::MinLatency)
            }
            SchedulerKind::SpLp | SchedulerKind::Ps1Lp | SchedulerKind::Ps2Lp | SchedulerKind::MhmpLp => Some(Mode::MinPower),
            SchedulerKind::Allp => None,
        }
    }

    pub fn valid_names() -> String {
        SchedulerKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('-', "_");
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| SchedulerError::UnknownKind { name: s.to_string(), valid: SchedulerKind::valid_names() })
    }
}

/// A scheme's output for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub decision: Decision,
    pub status: Status,
    /// Mode the adaptive controller ran in, if applicable.
    pub allp_mode: Option<AllpMode>,
    /// Set when no relaxation made the block feasible and a best-effort
    /// decision was applied.
    pub flagged: bool,
}

impl Schedule {
    fn from_result(r: SolverResult) -> Schedule {
        Schedule { decision: r.decision, status: r.status, allp_mode: None, flagged: false }
    }
}

/// Knobs shared by the schedulers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Blocks over which the fixed single path is scored before it is frozen.
    pub sp_warmup_blocks: usize,
    pub allp: AllpConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { sp_warmup_blocks: 1, allp: AllpConfig::default() }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.sp_warmup_blocks == 0 {
            return Err(SchedulerError::Config("sp_warmup_blocks must be at least 1".into()));
        }
        self.allp.validate()
    }
}

/// Full-power latency of every single path summed over services.
pub fn single_path_costs(inst: &ProblemInstance) -> Vec<f64> {
    let topo = &inst.topology;
    (0..topo.num_paths())
        .map(|b| {
            topo.path_hops(PathId { index: b })
                .into_iter()
                .map(|(x, k)| {
                    let d = inst.curves[topo.link_index(x, k)].rate(inst.p_tot_w);
                    (0..inst.num_services()).map(|q| inst.traffic.bits(x, q) / d).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

fn argmin(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

/// The fixed path of the single-path scheme: scored by full-power latency
/// over the warmup blocks, then frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct SpState {
    warmup_blocks: usize,
    seen: usize,
    cost: Vec<f64>,
    fixed: Option<usize>,
}

impl SpState {
    pub fn new(warmup_blocks: usize) -> SpState {
        SpState { warmup_blocks: warmup_blocks.max(1), seen: 0, cost: Vec::new(), fixed: None }
    }

    /// Path to use this block.
    pub fn path(&mut self, inst: &ProblemInstance) -> usize {
        if let Some(b) = self.fixed {
            return b;
        }
        let costs = single_path_costs(inst);
        if self.cost.is_empty() {
            self.cost = vec![0.0; costs.len()];
        }
        self.cost.iter_mut().zip(&costs).for_each(|(a, c)| *a += c);
        self.seen += 1;
        let b = argmin(&self.cost);
        if self.seen >= self.warmup_blocks {
            self.fixed = Some(b);
        }
        b
    }

    pub fn fixed_path(&self) -> Option<usize> {
        self.fixed
    }
}

/// Full power on one link per node along the given paths; an even power
/// split where the paths diverge.
pub fn pair_powers(topo: &Topology, paths: &[usize], cap: f64) -> Vec<[f64; 2]> {
    let mut used = vec![[false, false]; topo.num_nodes()];
    for &b in paths {
        for (x, k) in topo.path_hops(PathId { index: b }) {
            used[x][k] = true;
        }
    }
    used.iter()
        .map(|u| match u {
            [true, true] => [cap / 2.0, cap / 2.0],
            [true, false] => [cap, 0.0],
            [false, true] => [0.0, cap],
            [false, false] => [0.0, 0.0],
        })
        .collect()
}

fn latency_objective(inst: &ProblemInstance, d: &Decision) -> Result<(f64, bool), SolverError> {
    let rates = link_rates(&inst.topology, &inst.curves, d);
    let m = block_metrics(&inst.topology, d, &inst.traffic, &rates, &inst.budgets_s)?;
    Ok((m.worst_latency_s.iter().sum(), m.within_budget.iter().all(|&ok| ok)))
}

/// Fixed-power decision on a path set with optimal ratios.
fn fixed_power_schedule(inst: &ProblemInstance, paths: &[usize]) -> Result<(Schedule, f64), SolverError> {
    let powers = pair_powers(&inst.topology, paths, inst.p_tot_w);
    let d = evaluate_fixed_power(inst, &PathSet::Only(paths.to_vec()), &powers, PowerRule::Full)?;
    let (objective, ok) = latency_objective(inst, &d)?;
    let status = if ok { Status::Optimal } else { Status::Infeasible };
    Ok((Schedule { decision: d, status, allp_mode: None, flagged: false }, objective))
}

/// The fixed single path at full power (min-latency) or at minimum power
/// meeting the budgets (min-power).
pub fn sp_schedule(
    inst: &ProblemInstance,
    state: &mut SpState,
    objective: Mode,
    opts: &SolverOptions,
) -> Result<Schedule, SchedulerError> {
    let b = state.path(inst);
    Ok(match objective {
        Mode::MinLatency => fixed_power_schedule(inst, &[b])?.0,
        Mode::MinPower => Schedule::from_result(solve_min_power_on(inst, &PathSet::Only(vec![b]), opts)?),
    })
}

/// Which path-selection variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsScheme {
    One,
    Two,
}

/// Path made of each node's better link at full power (ties to link 0).
pub fn greedy_path(inst: &ProblemInstance) -> usize {
    let topo = &inst.topology;
    let mut choice = Vec::with_capacity(topo.relay_layers());
    let mut x = 0;
    for _ in 0..topo.relay_layers() {
        let r0 = inst.curves[topo.link_index(x, 0)].rate(inst.p_tot_w);
        let r1 = inst.curves[topo.link_index(x, 1)].rate(inst.p_tot_w);
        let k = usize::from(r1 > r0);
        choice.push(k);
        x = topo.child(x, k).expect("non-final layers have two children");
    }
    PathId::from_choice(&choice).index
}

fn all_pairs(topo: &Topology) -> Vec<[usize; 2]> {
    let n = topo.num_paths();
    (0..n).flat_map(|a| (a + 1..n).map(move |b| [a, b])).collect()
}

/// Best restricted solve over candidate path sets: lowest objective among
/// feasible results, else the lowest worst-case latency ratio.
fn best_restricted<F>(inst: &ProblemInstance, candidates: &[[usize; 2]], solve: F) -> Result<Schedule, SchedulerError>
where
    F: Fn(&PathSet) -> Result<SolverResult, SolverError>,
{
    Ok(Schedule::from_result(best_restricted_result(inst, candidates, solve)?.1))
}

fn restricted_score(inst: &ProblemInstance, r: &SolverResult) -> (bool, f64) {
    let feasible = r.status != Status::Infeasible;
    let score = if feasible {
        r.objective
    } else {
        r.worst_latency_s.iter().zip(&inst.budgets_s).map(|(w, l)| w / l).fold(0.0, f64::max)
    };
    (feasible, score)
}

fn best_restricted_result<F>(inst: &ProblemInstance, candidates: &[[usize; 2]], solve: F) -> Result<([usize; 2], SolverResult), SchedulerError>
where
    F: Fn(&PathSet) -> Result<SolverResult, SolverError>,
{
    let mut best: Option<(bool, f64, [usize; 2], SolverResult)> = None;
    for pair in candidates {
        let r = solve(&PathSet::Only(pair.to_vec()))?;
        let (feasible, score) = restricted_score(inst, &r);
        if best.as_ref().is_none_or(|(bf, bs, _, _)| (feasible && !bf) || (feasible == *bf && score < *bs)) {
            best = Some((feasible, score, *pair, r));
        }
    }
    let (_, _, pair, r) = best.ok_or_else(|| SchedulerError::Config("path selection needs at least two paths".into()))?;
    Ok((pair, r))
}

/// Path selection. Min-latency: scheme 1 follows each node's better link,
/// scheme 2 takes the best pair of paths at fixed power with optimal ratios.
/// Min-power: scheme 1 takes the pair needing the least power, scheme 2 the
/// two non-crossing paths.
pub fn ps_schedule(inst: &ProblemInstance, scheme: PsScheme, objective: Mode, opts: &SolverOptions) -> Result<Schedule, SchedulerError> {
    let topo = &inst.topology;
    match (scheme, objective) {
        (PsScheme::One, Mode::MinLatency) => Ok(fixed_power_schedule(inst, &[greedy_path(inst)])?.0),
        (PsScheme::Two, Mode::MinLatency) => {
            let mut best: Option<(f64, Schedule)> = None;
            for pair in all_pairs(topo) {
                let (s, v) = fixed_power_schedule(inst, &pair)?;
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, s));
                }
            }
            best.map(|(_, s)| s).ok_or_else(|| SchedulerError::Config("path selection needs at least two paths".into()))
        }
        (PsScheme::One, Mode::MinPower) => {
            // Screen pairs with a single start, then refine the winner.
            let screen = SolverOptions { local_starts: 1, ..opts.clone() };
            let (pair, first) = best_restricted_result(inst, &all_pairs(topo), |p| solve_min_power_on(inst, p, &screen))?;
            let refined = solve_min_power_on(inst, &PathSet::Only(pair.to_vec()), opts)?;
            let (fa, sa) = restricted_score(inst, &first);
            let (fb, sb) = restricted_score(inst, &refined);
            let keep_refined = (fb && !fa) || (fb == fa && sb <= sa);
            Ok(Schedule::from_result(if keep_refined { refined } else { first }))
        }
        (PsScheme::Two, Mode::MinPower) => {
            let last = topo.num_paths() - 1;
            Ok(Schedule::from_result(solve_min_power_on(inst, &PathSet::Only(vec![0, last]), opts)?))
        }
    }
}

/// Multi-path optimization restricted to the best pair of paths.
pub fn two_path_schedule(inst: &ProblemInstance, opts: &SolverOptions) -> Result<Schedule, SchedulerError> {
    best_restricted(inst, &all_pairs(&inst.topology), |p| solve_min_latency_on(inst, p, opts))
}

/// Full multi-path optimization.
pub fn mhmp_schedule(inst: &ProblemInstance, objective: Mode, opts: &SolverOptions) -> Result<Schedule, SchedulerError> {
    Ok(Schedule::from_result(match objective {
        Mode::MinLatency => solve_min_latency(inst, opts)?,
        Mode::MinPower => solve_min_power(inst, opts)?,
    }))
}

/// A scheme with its per-replica state.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    sp: SpState,
    allp: AllpState,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, config: &SchedulerConfig) -> Scheduler {
        Scheduler { kind, sp: SpState::new(config.sp_warmup_blocks), allp: AllpState::new(config.allp.clone()) }
    }

    /// Decides one block. `inst.mode` is ignored; each scheme sets its own.
    pub fn step(&mut self, inst: &ProblemInstance, opts: &SolverOptions) -> Result<Schedule, SchedulerError> {
        let ll = inst.with_mode(Mode::MinLatency);
        let lp = inst.with_mode(Mode::MinPower);
        match self.kind {
            SchedulerKind::SpLl => sp_schedule(&ll, &mut self.sp, Mode::MinLatency, opts),
            SchedulerKind::SpLp => sp_schedule(&lp, &mut self.sp, Mode::MinPower, opts),
            SchedulerKind::Ps1Ll => ps_schedule(&ll, PsScheme::One, Mode::MinLatency, opts),
            SchedulerKind::Ps2Ll => ps_schedule(&ll, PsScheme::Two, Mode::MinLatency, opts),
            SchedulerKind::Ps1Lp => ps_schedule(&lp, PsScheme::One, Mode::MinPower, opts),
            SchedulerKind::Ps2Lp => ps_schedule(&lp, PsScheme::Two, Mode::MinPower, opts),
            SchedulerKind::TwoPathLl => two_path_schedule(&ll, opts),
            SchedulerKind::MhmpLl => mhmp_schedule(&ll, Mode::MinLatency, opts),
            SchedulerKind::MhmpLp => mhmp_schedule(&lp, Mode::MinPower, opts),
            SchedulerKind::Allp => allp_step(&mut self.allp, inst, opts),
        }
    }

    pub fn allp_state(&self) -> &AllpState {
        &self.allp
    }

    pub fn sp_state(&self) -> &SpState {
        &self.sp
    }
}
