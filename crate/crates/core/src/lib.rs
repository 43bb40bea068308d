//! Multifaceted learnable index.
//!
//! Item embeddings are trained jointly with a per-facet residual-quantization
//! codebook. The learned codeword tuples become the retrieval index: after
//! training, the item pool is quantized, rebalanced so every index has a
//! bounded size, and published as immutable full/delta snapshots that serve
//! item-to-item retrieval by direct lookup instead of nearest-neighbor search.
//!
//! Module map:
//!
//! - [`corpus`]: synthetic topic-structured items and co-engagement events
//! - [`loss`], [`trainer`]: sampled-softmax losses with analytic gradients, Adagrad training
//! - [`quantizer`]: multifaceted residual quantization and the codebook
//! - [`rebalance`]: split-and-merge index rebalancing and item pruning
//! - [`index`], [`snapshot`]: unified indices, lookup structures, snapshot publishing
//! - [`serving`]: the four-stage retrieval pipeline
//! - [`eval`]: metrics, brute-force oracle, throughput bench and pipeline orchestration

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod container;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod index;
pub mod loss;
pub mod math;
pub mod quantizer;
pub mod rebalance;
pub mod serving;
pub mod snapshot;
pub mod trainer;

pub use config::Config;
pub use error::{DecodeError, Error, Result};
pub use exec::Exec;
