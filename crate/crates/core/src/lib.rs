//! Simulation of broadcast over a network of k-casts: the protocol, the
//! adversaries that attack it and a harness for running and replaying
//! executions.

pub mod adversary;
pub mod distribution;
pub mod harness;
pub mod netmodel;
pub mod protocol;
pub mod trustgraph;
