//! Multi-target one-time node injection attacks against GNN fraud detectors.
//!
//! The pipeline: generate or load an attributed fraud graph with gang-style
//! target sets, train surrogate and victim GNN detectors, train a
//! transformer-based attack model that injects budgeted attack nodes with
//! generated attributes and edges, and evaluate size-weighted
//! misclassification on the victim.
//!
//! Entry points:
//! - [`synth`] / [`data`]: synthetic fraud-gang graphs and the on-disk
//!   dataset format.
//! - [`detector`]: GCN and mean-aggregator SAGE detectors.
//! - [`attack`]: the injection attack model, its training and inference.
//! - [`ablation`]: the random-injection baseline plus ablation switches.
//! - [`eval`]: attack reports (weighted misclassification, collateral).
//! - [`runner`]: config-driven pipeline used by the `gangforge` binary and
//!   the examples.

pub mod ablation;
pub mod attack;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod graph;
pub mod gumbel;
pub mod nn;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
