//! Dense-network training with loss-based example selection.
//!
//! The crate trains small feedforward classifiers under several batch-construction
//! policies ([`strategies::Strategy`]) and records, per epoch, how many selection
//! forwards, training forwards and backward passes were spent, together with the
//! wall-clock time of each phase. The [`analysis`] module turns those logs into
//! target-error speedups, Pareto frontiers and phase breakdowns.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradsim;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod strategies;

pub use error::{Error, Result};
pub use exec::Exec;
pub use matrix::Matrix;
pub use nn::{Network, LrSchedule};
pub use strategies::{train, RunOutput, RunSpec, Strategy};
