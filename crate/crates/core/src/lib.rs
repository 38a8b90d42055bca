//! Probery: an embedded, file-backed key-value query engine whose queries
//! trade a bounded probability of completeness for a smaller scan.

pub mod cli;
pub mod error;
pub mod harness;
pub mod probability;
pub mod query;
pub mod scalar;
pub mod store;
pub mod tablespace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PlacementConfig64 = probability::PlacementConfig<f64>;
pub type PlacementConfig32 = probability::PlacementConfig<f32>;
pub type ProbTable64 = probability::ProbTable<f64>;
pub type ProbTable32 = probability::ProbTable<f32>;
