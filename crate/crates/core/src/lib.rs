//! Dynamic-GNN training engine with incremental aggregation, a two-level
//! aggregation cache and simulated multi-worker placement.

pub mod aggregate;
pub mod cache;
pub mod distsim;
pub mod dyngraph;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Snapshot32 = dyngraph::Snapshot<f32>;
pub type Snapshot64 = dyngraph::Snapshot<f64>;
pub type DynamicGraph32 = dyngraph::DynamicGraph<f32>;
pub type DynamicGraph64 = dyngraph::DynamicGraph<f64>;
