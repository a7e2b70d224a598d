//! Desk-scale dataset distillation and data-utility estimation.
//!
//! The crate estimates how much each real sample contributes to a distilled
//! dataset, selects subsets by that utility, measures the smallest subset ratio
//! whose distillation result matches full-data distillation, and runs
//! gradient-matching distillation with loss-based pruning of real batches.

pub mod dataset;
pub mod distill;
pub mod error;
pub mod harness;
pub mod model;
pub mod seed;
pub mod select;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
