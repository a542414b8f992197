//! CSV replay files for channel losses and traffic.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::channel::LinkState;
use crate::topology::{LinkId, Topology};
use crate::traffic::TrafficState;

#[derive(Debug, Serialize, Deserialize)]
struct LossRow {
    block: usize,
    layer: usize,
    tx: usize,
    rx: usize,
    loss_db: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrafficRow {
    block: usize,
    layer: usize,
    relay: usize,
    service: usize,
    lambda_pkts: u64,
    backlog_pkts: u64,
}

/// Per-block link losses keyed by block, in flat link order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelTrace {
    pub blocks: BTreeMap<usize, Vec<f64>>,
}

impl ChannelTrace {
    pub fn from_states(states: &[Vec<LinkState>]) -> ChannelTrace {
        let blocks = states
            .iter()
            .filter_map(|s| s.first().map(|f| (f.block, s.iter().map(|l| l.loss_db).collect())))
            .collect();
        ChannelTrace { blocks }
    }

    pub fn write_csv<W: Write>(&self, topo: &Topology, out: W) -> Result<(), EngineError> {
        let mut w = csv::Writer::from_writer(out);
        let links = topo.links();
        for (&block, losses) in &self.blocks {
            for (id, &loss_db) in links.iter().zip(losses) {
                w.serialize(LossRow { block, layer: id.layer, tx: id.tx, rx: id.rx, loss_db })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(topo: &Topology, input: R) -> Result<ChannelTrace, EngineError> {
        let mut blocks: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: LossRow = row?;
            let id = LinkId { layer: row.layer, tx: row.tx, rx: row.rx };
            let link = topo.find_link(id).ok_or_else(|| EngineError::Trace(format!("block {}: no link {id}", row.block)))?;
            let entry = blocks.entry(row.block).or_insert_with(|| vec![f64::NAN; topo.num_links()]);
            entry[link] = row.loss_db;
        }
        for (block, losses) in &blocks {
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(EngineError::Trace(format!("block {block}: loss missing for some links")));
            }
        }
        Ok(ChannelTrace { blocks })
    }

    pub fn losses(&self, block: usize) -> Result<&[f64], EngineError> {
        self.blocks.get(&block).map(Vec::as_slice).ok_or_else(|| EngineError::Trace(format!("channel trace has no block {block}")))
    }
}

/// Per-block arrivals and backlog keyed by block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficTrace {
    pub blocks: BTreeMap<usize, TrafficState>,
}

impl TrafficTrace {
    pub fn from_states(states: &[TrafficState]) -> TrafficTrace {
        TrafficTrace { blocks: states.iter().map(|s| (s.block, s.clone())).collect() }
    }

    pub fn write_csv<W: Write>(&self, topo: &Topology, out: W) -> Result<(), EngineError> {
        let mut w = csv::Writer::from_writer(out);
        for (&block, state) in &self.blocks {
            for node in 0..state.num_nodes() {
                let (layer, relay) = topo.node_position(node);
                for service in 0..state.num_services() {
                    w.serialize(TrafficRow {
                        block,
                        layer,
                        relay,
                        service,
                        lambda_pkts: state.arrivals[node][service],
                        backlog_pkts: state.backlog[node][service],
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(topo: &Topology, services: usize, input: R) -> Result<TrafficTrace, EngineError> {
        let mut blocks: BTreeMap<usize, (TrafficState, Vec<Vec<bool>>)> = BTreeMap::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: TrafficRow = row?;
            let valid = (row.layer == 0 && row.relay == 0) || (row.layer >= 1 && row.layer <= topo.relay_layers() && row.relay < 2);
            if !valid || row.service >= services {
                return Err(EngineError::Trace(format!(
                    "block {}: no node ({}, {}) or service {}",
                    row.block, row.layer, row.relay, row.service
                )));
            }
            let node = topo.node_index(row.layer, row.relay);
            let (state, seen) = blocks.entry(row.block).or_insert_with(|| {
                (TrafficState::zeros(row.block, topo.num_nodes(), services), vec![vec![false; services]; topo.num_nodes()])
            });
            state.arrivals[node][row.service] = row.lambda_pkts;
            state.backlog[node][row.service] = row.backlog_pkts;
            seen[node][row.service] = true;
        }
        let mut out = BTreeMap::new();
        for (block, (state, seen)) in blocks {
            if seen.iter().flatten().any(|s| !s) {
                return Err(EngineError::Trace(format!("block {block}: traffic missing for some nodes or services")));
            }
            out.insert(block, state);
        }
        Ok(TrafficTrace { blocks: out })
    }

    pub fn state(&self, block: usize) -> Result<&TrafficState, EngineError> {
        self.blocks.get(&block).ok_or_else(|| EngineError::Trace(format!("traffic trace has no block {block}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, LinkDistances};

    #[test]
    fn traffic_trace_survives_a_file_round_trip() {
        let topo = build_topology(2, &LinkDistances::default()).unwrap();
        let mut s = TrafficState::zeros(3, topo.num_nodes(), 2);
        s.arrivals[4][1] = 17;
        s.backlog[0][0] = 5;
        let trace = TrafficTrace::from_states(&[s]);
        let mut buf = Vec::new();
        trace.write_csv(&topo, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("block,layer,relay,service,lambda_pkts,backlog_pkts\n"));
        assert_eq!(TrafficTrace::read_csv(&topo, 2, buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn incomplete_channel_trace_is_rejected() {
        let topo = build_topology(1, &LinkDistances::default()).unwrap();
        let text = "block,layer,tx,rx,loss_db\n0,0,0,0,100.0\n";
        assert!(matches!(ChannelTrace::read_csv(&topo, text.as_bytes()), Err(EngineError::Trace(_))));
        let bad = "block,layer,tx,rx,loss_db\n0,5,0,0,100.0\n";
        assert!(matches!(ChannelTrace::read_csv(&topo, bad.as_bytes()), Err(EngineError::Trace(_))));
    }
}
