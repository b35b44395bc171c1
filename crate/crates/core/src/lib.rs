//! Graph-temporal next-day sleep label prediction.
//!
//! The crate covers the whole experiment path: communication-event graphs,
//! fixed-size graph extraction, hand-differentiated GCN/GAT/LSTM models,
//! preprocessing and synthetic cohorts with planted contagion, evaluation
//! statistics, and feature-perturbation robustness trials.

pub mod commgraph;
pub mod config;
pub mod data;
pub mod eval;
pub mod gedd;
pub mod models;
pub mod nn;
pub mod robustness;
pub mod seed;

pub use commgraph::{CommEvent, EventKind, WeightedGraph};
pub use gedd::{gedd_partition, GeddOutput};
pub use models::{Bundle, ModelKind, SleepModel};
