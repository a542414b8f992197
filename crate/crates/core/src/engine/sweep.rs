//! Savings of full multi-path over the fixed single path as the number of
//! relay layers grows.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run, EngineError, Estimate, RunConfig, Scenario};
use crate::schedulers::SchedulerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// Sum over services of average latency, min-latency schemes.
    Latency,
    /// Average network power, min-power schemes.
    Power,
}

impl SweepMetric {
    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::Latency => "latency",
            SweepMetric::Power => "power",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SweepMetric::Latency => "s",
            SweepMetric::Power => "w",
        }
    }

    /// `(multi-path, single-path)` schemes compared.
    pub fn schemes(self) -> [SchedulerKind; 2] {
        match self {
            SweepMetric::Latency => [SchedulerKind::MhmpLl, SchedulerKind::SpLl],
            SweepMetric::Power => [SchedulerKind::MhmpLp, SchedulerKind::SpLp],
        }
    }
}

impl fmt::Display for SweepMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepMetric {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "latency" | "latency-savings" => Ok(SweepMetric::Latency),
            "power" | "power-savings" => Ok(SweepMetric::Power),
            _ => Err(EngineError::Config(format!("unknown sweep metric '{s}'; valid metrics: latency, power"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub relay_layers: usize,
    pub metric: SweepMetric,
    pub mhmp: Estimate,
    pub sp: Estimate,
    /// `1 − mhmp / sp`, averaged over replicas.
    pub savings: Estimate,
}

/// One run per layer count with the base configuration otherwise unchanged.
pub fn hop_sweep(base: &RunConfig, layers: RangeInclusive<usize>, metric: SweepMetric) -> Result<Vec<SweepRow>, EngineError> {
    if layers.is_empty() {
        return Err(EngineError::Config("empty relay-layer range".into()));
    }
    let [multi, single] = metric.schemes();
    let mut rows = Vec::new();
    for h in layers {
        let cfg = RunConfig {
            scenario: Scenario { relay_layers: h, ..base.scenario.clone() },
            schemes: vec![multi, single],
            ..base.clone()
        };
        let report = run(&cfg)?;
        let value = |k: SchedulerKind| {
            let s = report.scheme(k).expect("scheme was run");
            match metric {
                SweepMetric::Latency => s.replica_total_latency_s(),
                SweepMetric::Power => s.replica_avg_power_w.clone(),
            }
        };
        let (m, s) = (value(multi), value(single));
        let savings: Vec<f64> = m.iter().zip(&s).map(|(a, b)| 1.0 - a / b).collect();
        rows.push(SweepRow {
            relay_layers: h,
            metric,
            mhmp: Estimate::from_samples(&m),
            sp: Estimate::from_samples(&s),
            savings: Estimate::from_samples(&savings),
        });
    }
    Ok(rows)
}
