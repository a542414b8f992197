//! Adaptive controller: min-latency when the network is stressed, min-power
//! otherwise.
//!
//! Each block the min-latency program is solved at the base cap and the
//! workload indicator `W = max_q V_q / L_q` is formed. Above the threshold
//! `δ` the controller keeps that decision; at or below it, it runs the
//! min-power program. An infeasible block gets one relaxed re-solve (cap
//! raised by `Δ_P`, up to `P_hard`, or budgets raised by `Δ_L`, up to
//! `ceiling_factor · L_q`); if that also fails the full-power min-latency
//! decision is applied and the block is flagged.

use serde::{Deserialize, Serialize};

use super::{Schedule, SchedulerError};
use crate::solver::{solve_min_latency, solve_min_power, Mode, ProblemInstance, SolverOptions, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllpMode {
    MinLatency,
    MinPower,
}

impl AllpMode {
    pub fn name(self) -> &'static str {
        match self {
            AllpMode::MinLatency => "ll",
            AllpMode::MinPower => "lp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllpConfig {
    /// Workload threshold `δ`.
    pub delta: f64,
    /// Cap increase for an infeasible min-latency block, watts.
    pub delta_p_w: f64,
    /// Hard per-node cap; `None` keeps the base cap.
    pub p_hard_w: Option<f64>,
    /// Budget increase for an infeasible min-power block, seconds.
    pub delta_l_s: f64,
    /// Relaxed budgets never exceed this multiple of the base budget.
    pub budget_ceiling_factor: f64,
}

impl Default for AllpConfig {
    fn default() -> Self {
        AllpConfig { delta: 0.8, delta_p_w: 0.0, p_hard_w: None, delta_l_s: 0.005, budget_ceiling_factor: 2.0 }
    }
}

impl AllpConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let fail = |m: &str| Err(SchedulerError::Config(m.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail("allp delta must be positive");
        }
        if !(self.delta_p_w >= 0.0 && self.delta_p_w.is_finite()) {
            return fail("allp delta_p_w must be nonnegative");
        }
        if self.p_hard_w.is_some_and(|p| !(p > 0.0 && p.is_finite())) {
            return fail("allp p_hard_w must be positive");
        }
        if !(self.delta_l_s >= 0.0 && self.delta_l_s.is_finite()) {
            return fail("allp delta_l_s must be nonnegative");
        }
        if !(self.budget_ceiling_factor >= 1.0 && self.budget_ceiling_factor.is_finite()) {
            return fail("allp budget_ceiling_factor must be at least 1");
        }
        Ok(())
    }
}

/// Controller state carried across blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllpState {
    pub config: AllpConfig,
    /// Mode of the last decided block.
    pub mode: Option<AllpMode>,
    /// Workload indicator of the last block.
    pub workload: f64,
    /// Cap and budgets used by the last block's final solve.
    pub cap_w: f64,
    pub budgets_s: Vec<f64>,
    pub flagged_blocks: usize,
    pub blocks: usize,
}

impl AllpState {
    pub fn new(config: AllpConfig) -> AllpState {
        AllpState { config, mode: None, workload: f64::NAN, cap_w: f64::NAN, budgets_s: Vec::new(), flagged_blocks: 0, blocks: 0 }
    }
}

/// Decides one block and updates the controller state.
pub fn allp_step(state: &mut AllpState, inst: &ProblemInstance, opts: &SolverOptions) -> Result<Schedule, SchedulerError> {
    let cfg = state.config.clone();
    let ll_inst = inst.with_mode(Mode::MinLatency);
    let ll = solve_min_latency(&ll_inst, opts)?;
    let workload = ll.worst_latency_s.iter().zip(&inst.budgets_s).map(|(v, l)| v / l).fold(0.0, f64::max);
    state.workload = workload;
    state.blocks += 1;
    state.cap_w = inst.p_tot_w;
    state.budgets_s = inst.budgets_s.clone();

    let mode = if workload > cfg.delta { AllpMode::MinLatency } else { AllpMode::MinPower };
    state.mode = Some(mode);
    let done = |r: crate::solver::SolverResult| Schedule { decision: r.decision, status: r.status, allp_mode: Some(mode), flagged: false };

    let relaxed = match mode {
        AllpMode::MinLatency => {
            if ll.status != Status::Infeasible {
                return Ok(done(ll));
            }
            let hard = cfg.p_hard_w.unwrap_or(inst.p_tot_w);
            let cap = (inst.p_tot_w + cfg.delta_p_w).min(hard);
            if cap > inst.p_tot_w {
                state.cap_w = cap;
                let r = solve_min_latency(&ProblemInstance { p_tot_w: cap, ..ll_inst.clone() }, opts)?;
                (r.status != Status::Infeasible).then_some(r)
            } else {
                None
            }
        }
        AllpMode::MinPower => {
            let lp_inst = inst.with_mode(Mode::MinPower);
            let lp = solve_min_power(&lp_inst, opts)?;
            if lp.status != Status::Infeasible {
                return Ok(done(lp));
            }
            let budgets: Vec<f64> = inst
                .budgets_s
                .iter()
                .map(|l| (l + cfg.delta_l_s).min(l * cfg.budget_ceiling_factor))
                .collect();
            if budgets != inst.budgets_s {
                state.budgets_s = budgets.clone();
                let r = solve_min_power(&ProblemInstance { budgets_s: budgets, ..lp_inst }, opts)?;
                (r.status != Status::Infeasible).then_some(r)
            } else {
                None
            }
        }
    };
    Ok(match relaxed {
        Some(r) => done(r),
        None => {
            state.flagged_blocks += 1;
            state.cap_w = inst.p_tot_w;
            Schedule { decision: ll.decision, status: ll.status, allp_mode: Some(mode), flagged: true }
        }
    })
}
