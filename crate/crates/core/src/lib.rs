//! Quantum trajectories for continuously monitored two-level systems with
//! random coefficients and measurement-based feedback.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod atom;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod noise;
pub mod ops;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
