//! Per-block optimization of split ratios and link powers.
//!
//! Two programs share the same model:
//!
//! * **min-latency**: every transmitting node spends its full power cap; minimize
//!   the sum over services of the worst routed-path latency.
//! * **min-power**: minimize total transmit power subject to each service's
//!   worst routed-path latency staying within its budget, with per-node power
//!   at most the cap.
//!
//! For fixed powers the optimal split ratios follow from an exact backward
//! recursion over the layers ([`network`]), so both programs are solved over
//! the power variables only. Path latency `α·c / D(P)` is not jointly convex in
//! `(α, P)` (the ratio of a linear and a concave function), so the solvers use
//! seeded multi-start quasi-Newton descent and the min-power program adds a
//! log-barrier continuation. [`grid_oracle`] provides an exhaustive reference
//! on small instances, [`certify_kkt`] measures first-order optimality, and
//! [`convexity_probe`] samples the convex-combination inequality.

mod convexity;
mod kkt;
mod lbfgs;
mod min_latency;
mod min_power;
pub(crate) mod network;
mod nnls;
mod oracle;
mod polish;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::RateCurve;
use crate::perf::{BlockTraffic, Decision, PerfError};
use crate::topology::Topology;

pub use convexity::{convexity_probe, ConvexityReport};
pub use kkt::certify_kkt;
pub use min_latency::{evaluate_fixed_power, solve_min_latency, solve_min_latency_on};
pub use min_power::{solve_min_power, solve_min_power_on};
pub use nnls::nnls;
pub use oracle::{grid_oracle, refined_grid_oracle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid problem instance: {0}")]
    Instance(String),
    #[error("grid oracle needs {needed:.3e} evaluations, above the cap of {cap:.3e}; use a coarser resolution or a smaller instance")]
    OracleCap { needed: f64, cap: f64 },
    #[error("decision violates the constraints by {violation:.3e}; cannot certify")]
    InfeasibleDecision { violation: f64 },
    #[error("the grid oracle supports the min-latency program only")]
    OracleMode,
    #[error(transparent)]
    Perf(#[from] PerfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MinLatency,
    MinPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// One block's optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub topology: Topology,
    /// Rate curve per link, flat link order.
    pub curves: Vec<RateCurve>,
    pub traffic: BlockTraffic,
    /// Per-node power cap, watts.
    pub p_tot_w: f64,
    pub budgets_s: Vec<f64>,
    pub mode: Mode,
    pub block: usize,
}

impl ProblemInstance {
    pub fn num_services(&self) -> usize {
        self.traffic.num_services()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let fail = |m: String| Err(SolverError::Instance(m));
        let t = &self.topology;
        if self.curves.len() != t.num_links() {
            return fail(format!("{} rate curves for {} links", self.curves.len(), t.num_links()));
        }
        if self.traffic.loads_pkts.len() != t.num_nodes() {
            return fail(format!("{} traffic rows for {} nodes", self.traffic.loads_pkts.len(), t.num_nodes()));
        }
        let q = self.num_services();
        if q == 0 || self.traffic.loads_pkts.iter().any(|r| r.len() != q) || self.budgets_s.len() != q {
            return fail("inconsistent number of services".into());
        }
        if !(self.p_tot_w > 0.0 && self.p_tot_w.is_finite()) {
            return fail(format!("power cap must be positive, got {} W", self.p_tot_w));
        }
        if self.curves.iter().any(|c| !(c.gain > 0.0 && c.gain.is_finite() && c.noise_w > 0.0)) {
            return fail("every link needs a finite loss and positive noise".into());
        }
        if self.traffic.loads_pkts.iter().flatten().any(|&l| !(l >= 0.0 && l.is_finite()))
            || self.traffic.packet_bits.iter().any(|&m| !(m > 0.0 && m.is_finite()))
        {
            return fail("traffic loads must be nonnegative and packet sizes positive".into());
        }
        if self.mode == Mode::MinPower && self.budgets_s.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return fail("latency budgets must be positive".into());
        }
        Ok(())
    }

    /// Same instance with a different mode.
    pub fn with_mode(&self, mode: Mode) -> ProblemInstance {
        ProblemInstance { mode, ..self.clone() }
    }
}

/// Tunables shared by both programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Largest accepted first-order optimality residual for an optimal status.
    pub kkt_tolerance: f64,
    /// Iteration cap per local descent.
    pub max_iterations: usize,
    /// Number of best seeds refined by local descent.
    pub local_starts: usize,
    /// Extra uniformly random seeds.
    pub random_starts: usize,
    /// Grid levels per power-split coordinate for seeding small problems.
    pub grid_levels: usize,
    pub seed: u64,
    /// Treat latency budgets as hard constraints in the min-latency program.
    pub enforce_latency_budget: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tolerance: 1e-6,
            max_iterations: 400,
            local_starts: 12,
            random_starts: 8,
            grid_levels: 5,
            seed: 0,
            enforce_latency_budget: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub decision: Decision,
    /// Sum of worst-path latencies (min-latency) or total power (min-power).
    pub objective: f64,
    pub status: Status,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Achieved worst routed-path latency per service.
    pub worst_latency_s: Vec<f64>,
}

/// Paths a solve may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSet {
    /// Every path; a path counts only while it carries traffic.
    All,
    /// The subgraph induced by these paths; all of its paths count.
    Only(Vec<usize>),
}
