//! Knowledge-graph driven operational decision engine.

pub mod fusion;
pub mod graph;
pub mod linalg;
pub mod real17;
pub mod sim;
pub mod config;
pub mod engine;
pub mod gnn;
