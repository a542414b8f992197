//! Layered relay network: one source, `H` layers of two relays, one destination.
//!
//! Nodes that transmit are the source (layer 0) and every relay (layers
//! `1..=H`). A transmitter in layer `ℓ < H` has two outgoing links, one to each
//! relay of layer `ℓ + 1`; relays of the last layer have a single link to the
//! destination. An end-to-end path picks one relay per layer, so there are
//! `2^H` paths and a path index doubles as its relay-choice bit pattern
//! (layer 1 is the least-significant bit).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported number of relay layers.
pub const MAX_RELAY_LAYERS: usize = 16;

/// Default spacing between consecutive vehicles.
pub const DEFAULT_LINK_DISTANCE_M: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("relay layer count must be between 1 and {MAX_RELAY_LAYERS}, got {0}")]
    LayerCount(usize),
    #[error("link distance must be positive and finite, got {distance} m for link {link}")]
    Distance { link: LinkId, distance: f64 },
    #[error("expected {expected} per-link distances, got {got}")]
    DistanceCount { expected: usize, got: usize },
    #[error("path index {index} out of range for {paths} paths")]
    PathOutOfRange { index: usize, paths: usize },
}

/// A directed link `(layer, tx) → (layer + 1, rx)`. Layer 0 is the source,
/// so `tx` is always 0 there; for the last relay layer `rx` is 0 (destination).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId {
    pub layer: usize,
    pub tx: usize,
    pub rx: usize,
}

impl std::fmt::Display for LinkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})->({},{})", self.layer, self.tx, self.layer + 1, self.rx)
    }
}

/// Per-link distances, either one value for every link or one per link in
/// [`Topology::links`] order.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkDistances {
    Uniform(f64),
    PerLink(Vec<f64>),
}

impl Default for LinkDistances {
    fn default() -> Self {
        LinkDistances::Uniform(DEFAULT_LINK_DISTANCE_M)
    }
}

/// End-to-end path identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathId {
    pub index: usize,
}

impl PathId {
    /// Relay chosen in relay layer `layer` (1-based).
    pub fn relay_at(self, layer: usize) -> usize {
        debug_assert!(layer >= 1);
        (self.index >> (layer - 1)) & 1
    }

    /// Relay choices for layers `1..=h`.
    pub fn relay_choice(self, h: usize) -> Vec<usize> {
        (1..=h).map(|l| self.relay_at(l)).collect()
    }

    /// Inverse of [`PathId::relay_choice`].
    pub fn from_choice(choice: &[usize]) -> PathId {
        let index = choice
            .iter()
            .enumerate()
            .fold(0, |acc, (l, &r)| acc | ((r & 1) << l));
        PathId { index }
    }
}

impl std::fmt::Display for PathId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "path{}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    relay_layers: usize,
    relays_per_layer: usize,
    paths_per_relay: usize,
    distances_m: Vec<f64>,
}

impl Topology {
    pub fn relay_layers(&self) -> usize {
        self.relay_layers
    }

    pub fn relays_per_layer(&self) -> usize {
        self.relays_per_layer
    }

    pub fn paths_per_relay(&self) -> usize {
        self.paths_per_relay
    }

    /// Number of transmitting nodes: the source plus every relay.
    pub fn num_nodes(&self) -> usize {
        1 + self.relays_per_layer * self.relay_layers
    }

    pub fn num_links(&self) -> usize {
        4 * self.relay_layers
    }

    pub fn num_paths(&self) -> usize {
        1 << self.relay_layers
    }

    /// Flat index of the transmitter `(layer, j)`; the source is node 0.
    pub fn node_index(&self, layer: usize, j: usize) -> usize {
        if layer == 0 {
            0
        } else {
            1 + 2 * (layer - 1) + j
        }
    }

    /// Inverse of [`Topology::node_index`].
    pub fn node_position(&self, node: usize) -> (usize, usize) {
        if node == 0 {
            (0, 0)
        } else {
            (1 + (node - 1) / 2, (node - 1) % 2)
        }
    }

    /// Number of outgoing links of a transmitter.
    pub fn out_degree(&self, node: usize) -> usize {
        let (layer, _) = self.node_position(node);
        if layer == self.relay_layers {
            1
        } else {
            2
        }
    }

    /// Receiving transmitter node of link `k` out of `node`, or `None` when
    /// the link ends at the destination.
    pub fn child(&self, node: usize, k: usize) -> Option<usize> {
        let (layer, _) = self.node_position(node);
        if layer == self.relay_layers {
            None
        } else {
            Some(self.node_index(layer + 1, k))
        }
    }

    /// Flat link index of outgoing link `k` of `node`; links of a node are
    /// contiguous and nodes appear in [`Topology::node_index`] order.
    pub fn link_index(&self, node: usize, k: usize) -> usize {
        let (layer, j) = self.node_position(node);
        if layer == 0 {
            k
        } else if layer < self.relay_layers {
            2 + 4 * (layer - 1) + 2 * j + k
        } else {
            2 + 4 * (layer - 1) + j
        }
    }

    pub fn link_id(&self, node: usize, k: usize) -> LinkId {
        let (layer, tx) = self.node_position(node);
        let rx = if layer == self.relay_layers { 0 } else { k };
        LinkId { layer, tx, rx }
    }

    /// All links in flat-index order.
    pub fn links(&self) -> Vec<LinkId> {
        (0..self.num_nodes())
            .flat_map(|x| (0..self.out_degree(x)).map(move |k| (x, k)))
            .map(|(x, k)| self.link_id(x, k))
            .collect()
    }

    /// Flat index of a link, or `None` if it does not exist.
    pub fn find_link(&self, id: LinkId) -> Option<usize> {
        let h = self.relay_layers;
        let valid = match id.layer {
            0 => id.tx == 0 && id.rx < 2,
            l if l < h => id.tx < 2 && id.rx < 2,
            l if l == h => id.tx < 2 && id.rx == 0,
            _ => false,
        };
        valid.then(|| {
            let node = self.node_index(id.layer, id.tx);
            let k = if id.layer == h { 0 } else { id.rx };
            self.link_index(node, k)
        })
    }

    pub fn distance_m(&self, link: usize) -> f64 {
        self.distances_m[link]
    }

    pub fn distances_m(&self) -> &[f64] {
        &self.distances_m
    }

    /// Returns a copy with every distance shifted by `delta_m`, floored at 1 m.
    pub fn displaced(&self, delta_m: f64) -> Topology {
        let mut t = self.clone();
        for d in &mut t.distances_m {
            *d = (*d + delta_m).max(1.0);
        }
        t
    }

    /// Node sequence (source first) visited by a path.
    pub fn path_nodes(&self, b: PathId) -> Vec<usize> {
        std::iter::once(0)
            .chain((1..=self.relay_layers).map(|l| self.node_index(l, b.relay_at(l))))
            .collect()
    }

    /// `(node, k)` hop sequence of a path.
    pub fn path_hops(&self, b: PathId) -> Vec<(usize, usize)> {
        let h = self.relay_layers;
        (0..=h)
            .map(|l| {
                let node = if l == 0 { 0 } else { self.node_index(l, b.relay_at(l)) };
                let k = if l == h { 0 } else { b.relay_at(l + 1) };
                (node, k)
            })
            .collect()
    }
}

/// Builds the layered topology.
pub fn build_topology(relay_layers: usize, distances: &LinkDistances) -> Result<Topology, TopologyError> {
    if relay_layers == 0 || relay_layers > MAX_RELAY_LAYERS {
        return Err(TopologyError::LayerCount(relay_layers));
    }
    let num_links = 4 * relay_layers;
    let distances_m = match distances {
        LinkDistances::Uniform(d) => vec![*d; num_links],
        LinkDistances::PerLink(v) => {
            if v.len() != num_links {
                return Err(TopologyError::DistanceCount { expected: num_links, got: v.len() });
            }
            v.clone()
        }
    };
    let topo = Topology { relay_layers, relays_per_layer: 2, paths_per_relay: 2, distances_m };
    for (link, &distance) in topo.distances_m.iter().enumerate() {
        if !(distance > 0.0 && distance.is_finite()) {
            let id = topo.links()[link];
            return Err(TopologyError::Distance { link: id, distance });
        }
    }
    Ok(topo)
}

/// Every end-to-end path in little-endian bit order.
pub fn enumerate_paths(topo: &Topology) -> Vec<PathId> {
    (0..topo.num_paths()).map(|index| PathId { index }).collect()
}

/// Links traversed by a path, ordered by layer: source hop, relay-to-relay
/// hops, and the final hop into the destination (`H + 1` links in total).
pub fn path_links(topo: &Topology, b: PathId) -> Result<Vec<LinkId>, TopologyError> {
    if b.index >= topo.num_paths() {
        return Err(TopologyError::PathOutOfRange { index: b.index, paths: topo.num_paths() });
    }
    Ok(topo.path_hops(b).into_iter().map(|(x, k)| topo.link_id(x, k)).collect())
}
