//! Privacy-preserving recommender pipeline.
//!
//! The server recalls candidates from public data ([`recall`]), clients rank
//! them with a federated model that sees their private features
//! ([`ranker`], [`protocol`]), and the server re-ranks the client's
//! item-id-only request ([`rerank`]). [`eval`] compares the federated model
//! against centralized and local-only baselines; [`protocol::Auditor`]
//! checks every message for private data.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
mod math;
pub mod protocol;
pub mod ranker;
pub mod recall;
pub mod rerank;
pub mod rng;

pub use error::{Error, Result};
pub use math::sigmoid;
