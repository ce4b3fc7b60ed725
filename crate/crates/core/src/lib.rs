//! Simulation of shortest-path algorithms in the hybrid network model: nodes
//! talk to graph neighbours over local edges and to anyone over a small
//! global channel.

pub mod apsp;
pub mod graph;
pub mod harness;
pub mod rng;
pub mod sim;
pub mod spanner;
pub mod sssp_bcc;
pub mod sssp_exact;
pub mod tokens;
