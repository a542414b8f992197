//! Multi-hop multi-path relay network simulator: channel and traffic models,
//! per-block latency and power optimization, baseline schedulers and a
//! Monte-Carlo engine.

pub mod channel;
pub mod engine;
pub mod perf;
pub mod schedulers;
pub mod solver;
pub mod topology;
pub mod traffic;
