//! Result files. Column names carry their units.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, RunReport, SchemeSummary, SweepRow, WrittenFiles};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub seed: u64,
    pub replicas: usize,
    pub blocks: usize,
    pub block_s: f64,
    pub relay_layers: usize,
    pub p_tot_dbm: f64,
    pub latency_budget_ms: Vec<f64>,
    pub schemes: Vec<SchemeSummary>,
}

impl SummaryFile {
    pub fn from_report(report: &RunReport) -> SummaryFile {
        let c = &report.config;
        SummaryFile {
            schema_version: SUMMARY_SCHEMA_VERSION,
            seed: c.seed,
            replicas: c.replicas,
            blocks: c.blocks,
            block_s: c.block_s,
            relay_layers: c.scenario.relay_layers,
            p_tot_dbm: c.scenario.p_tot_dbm,
            latency_budget_ms: c.scenario.budgets_s().iter().map(|l| l * 1e3).collect(),
            schemes: report.schemes.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, EngineError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn opt_mode(m: Option<crate::schedulers::AllpMode>) -> &'static str {
    m.map_or("", |m| m.name())
}

fn status_name(s: crate::solver::Status) -> &'static str {
    match s {
        crate::solver::Status::Optimal => "optimal",
        crate::solver::Status::Infeasible => "infeasible",
        crate::solver::Status::MaxIterations => "max_iterations",
    }
}

fn csv_file(dir: &Path, name: &str, files: &mut WrittenFiles) -> Result<csv::Writer<BufWriter<File>>, EngineError> {
    let path = dir.join(name);
    let w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    files.push(path);
    Ok(w)
}

/// Writes `summary.json`, `metrics.csv`, `cdf.csv`, `channel.csv`,
/// `traffic.csv` and `trajectories.csv` into `dir`.
pub fn write_run_outputs(report: &RunReport, dir: &Path) -> Result<WrittenFiles, EngineError> {
    fs::create_dir_all(dir)?;
    let mut files = WrittenFiles::new();
    let topo = &report.topology;
    let paths = topo.num_paths();

    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, SummaryFile::from_report(report).to_json()?)?;
    files.push(summary_path);

    let mut w = csv_file(dir, "metrics.csv", &mut files)?;
    let mut header: Vec<String> = [
        "replica",
        "block",
        "scheme",
        "service",
        "worst_latency_s",
        "total_power_w",
        "status",
        "allp_mode",
        "flagged",
        "within_budget",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..paths).map(|b| format!("path{b}_latency_s")));
    w.write_record(&header)?;
    for r in &report.records {
        for q in 0..r.worst_latency_s.len() {
            let mut row = vec![
                r.replica.to_string(),
                r.block.to_string(),
                r.scheme.to_string(),
                q.to_string(),
                r.worst_latency_s[q].to_string(),
                r.total_power_w.to_string(),
                status_name(r.status).to_string(),
                opt_mode(r.allp_mode).to_string(),
                r.flagged.to_string(),
                r.within_budget[q].to_string(),
            ];
            row.extend(r.path_latency_s[q].iter().map(|u| u.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = csv_file(dir, "cdf.csv", &mut files)?;
    w.write_record(["scheme", "service", "latency_s", "cdf"])?;
    for s in &report.cdf {
        for p in &s.points {
            w.write_record([s.scheme.to_string(), s.service.to_string(), p.latency_s.to_string(), p.cdf.to_string()])?;
        }
    }
    w.flush()?;

    let path = dir.join("channel.csv");
    report.channel_trace.write_csv(topo, BufWriter::new(File::create(&path)?))?;
    files.push(path);
    let path = dir.join("traffic.csv");
    report.traffic_trace.write_csv(topo, BufWriter::new(File::create(&path)?))?;
    files.push(path);

    let mut w = csv_file(dir, "trajectories.csv", &mut files)?;
    w.write_record(["block", "scheme", "layer", "relay", "service", "alpha_link0", "alpha_link1", "power_link0_w", "power_link1_w"])?;
    for r in report.records.iter().filter(|r| r.replica == 0) {
        let Some(d) = &r.decision else { continue };
        for x in 0..topo.num_nodes() {
            let (layer, relay) = topo.node_position(x);
            let p = d.power(x);
            for q in 0..d.num_services() {
                let a = d.alpha(x, q);
                w.write_record([
                    r.block.to_string(),
                    r.scheme.to_string(),
                    layer.to_string(),
                    relay.to_string(),
                    q.to_string(),
                    a[0].to_string(),
                    a[1].to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(files)
}

/// Writes the hop-sweep table.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["relay_layers", "metric", "unit", "mhmp", "sp", "savings_ratio", "savings_ci95_half_width"])?;
    for r in rows {
        w.write_record([
            r.relay_layers.to_string(),
            r.metric.name().to_string(),
            r.metric.unit().to_string(),
            r.mhmp.mean.to_string(),
            r.sp.mean.to_string(),
            r.savings.mean.to_string(),
            r.savings.ci95_half_width.map_or(String::new(), |h| h.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
