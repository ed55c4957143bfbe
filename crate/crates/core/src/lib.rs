//! CloudFormer: predicting VM performance degradation under co-location
//! interference from host-observable system metrics.
//!
//! The crate covers the whole pipeline: the trace data model and on-disk
//! format ([`traceio`]), a synthetic workload/interference generator
//! ([`synthgen`]), normalization, app-level splits and padded batching
//! ([`preprocess`]), a small reverse-mode autodiff engine with transformer
//! kernels ([`nn`]), the dual-branch model ([`model`]), training
//! ([`train`]), the comparison baselines ([`baselines`]) and the
//! multi-seed evaluation harness ([`eval`]).

pub mod baselines;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod par;
pub mod preprocess;
pub mod seed;
pub mod synthgen;
pub mod train;
pub mod traceio;

pub use error::{Error, Result};
pub use par::Parallelism;
pub use seed::SeedStream;
