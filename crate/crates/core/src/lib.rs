//! Deterministic simulator for differentially private federated optimization.
//!
//! Clients release clipped, Gaussian-perturbed gradient sums; the server
//! aggregates them and either takes a plain descent step or a step
//! preconditioned by the inverse of a rank-one Fisher proxy built from a
//! momentum buffer of the privatized aggregates. The inverse is applied with
//! the Sherman–Morrison identity in `O(d)` time.
//!
//! Module map:
//!
//! - [`config`], [`rng`], [`metrics`]: shared configuration, the per-client
//!   noise stream contract, and round metrics.
//! - [`task`]: objectives (softmax head, synthetic quadratic), data ingestion
//!   and partitioning.
//! - [`client`]: per-example clipping and the Gaussian release.
//! - [`server`]: aggregation, momentum and the two optimizer steps.
//! - [`accountant`]: hockey-stick Gaussian accounting and noise calibration.
//! - [`harness`]: round loop, experiments, grid search and metrics files.
//! - [`verify`]: numerical checks of the convergence and privacy bounds.
//! - [`oracle`]: dense reference computations used only by tests and `verify`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod client;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod server;
pub mod task;
pub mod verify;

pub use error::{Error, Result};
