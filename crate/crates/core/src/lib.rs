//! MambaRate: MOS prediction from precomputed speech embeddings.
//!
//! The numerical core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, the precision used by the CLI.

// `!(x > 0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data_io;
pub mod diff;
pub mod metrics;
pub mod model;
pub mod rbf;
pub mod scalar;
pub mod seeds;
pub mod train;

pub type Tensor = diff::Tensor<f64>;
pub type Graph = diff::Graph<f64>;
pub type Model = model::MambaRate<f64>;
pub type Checkpoint = model::ModelCheckpoint<f64>;
pub type Codec = rbf::RbfCodec<f64>;
pub type Trainer = train::Trainer<f64>;
