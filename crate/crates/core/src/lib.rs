//! Planning and simulation for collaborative transformer inference on a
//! heterogeneous edge fleet.
//!
//! A large transformer is decomposed into one smaller sub-model per device.
//! [`bo`] searches the decomposition space with a Gaussian-process surrogate,
//! [`evaluator`] scores candidates by accuracy degradation plus end-to-end
//! latency, [`simulator`] replays the resulting schedules as discrete events,
//! and [`booster`] / [`aggregator`] exercise sequential distillation and
//! feature fusion on toy classifiers.

pub mod aggregator;
pub mod arch;
pub mod bo;
pub mod booster;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod latency;
pub mod nn;
pub mod simulator;

pub use error::{Error, Result};
