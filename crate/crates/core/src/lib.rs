//! Query-conditioned visual token reduction for hybrid Mamba-Transformer prefill.

pub mod analysis;
pub mod error;
pub mod flops;
pub mod importance;
pub mod model;
pub mod runner;
pub mod scalar;
pub mod scan;
pub mod schedule;
pub mod selection;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Parameters32 = model::Parameters<f32>;
pub type Parameters64 = model::Parameters<f64>;
pub type HiddenSequence32 = model::HiddenSequence<f32>;
pub type HiddenSequence64 = model::HiddenSequence<f64>;
pub type ScanInputs32 = scan::ScanInputs<f32>;
pub type ScanInputs64 = scan::ScanInputs<f64>;
pub type ImportanceMap32 = importance::ImportanceMap<f32>;
pub type ImportanceMap64 = importance::ImportanceMap<f64>;
