//! Online false coverage rate control: LORD-CI level scheduling, marginal and
//! conditional interval rules, selection rules, post-hoc FCP bounds, conformal
//! prediction intervals and the replicated sparse-signal experiments.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod conformal;
pub mod error;
pub mod interval;
pub mod metrics;
pub mod normal;
mod par;
pub mod posthoc;
pub mod protocol;
mod roots;
pub mod rules;
pub mod scheduler;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
