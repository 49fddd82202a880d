//! Differentially private graph neural networks through aggregation
//! perturbation.
//!
//! The crate is organised around the three stages of the architecture:
//!
//! - an encoder MLP trained on node features alone ([`gap::pretrain_encoder`]),
//! - a private multi-hop aggregation over the graph whose output is cached
//!   once ([`pma::run_pma`]),
//! - a classification module trained on the cache without further access to
//!   the edges ([`gap::classifier`]).
//!
//! Privacy accounting uses Rényi DP ([`privacy`]). Edge-level privacy only
//! pays for the aggregation; node-level privacy additionally trains both MLP
//! stages with DP-Adam and bounds in-degrees by neighbor sampling.

pub mod audit;
mod codec;
pub mod error;
pub mod gap;
pub mod graph;
pub mod neural;
pub mod pma;
pub mod privacy;
pub mod rng;
pub mod stats;

pub use error::{GapError, Result};
pub use gap::{GapConfig, GapModel, PrivacyLedger, RunOutcome};
pub use graph::{DegreeBoundedView, GraphDataset, InNeighbors, Split};
pub use pma::{AggregationCache, PmaConfig};
pub use privacy::{PrivacyBudget, PrivacyLevel, RdpCurve, SampledGaussianParams};
