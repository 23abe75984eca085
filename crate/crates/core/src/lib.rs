//! Tensor-train compressed transformer training.
//!
//! Forward propagation, backward propagation and parameter updates run
//! directly on TT / TTM factors; weight matrices are never materialized on
//! the training path. Alongside the engine live the closed-form cost models
//! for the contraction orders it implements and a planner that packs the
//! factors into fixed-capacity on-chip memory blocks.

pub mod bram;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod meter;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod spill;
pub mod tensor;
pub mod tt_linear;
pub mod ttm_embedding;

pub use error::{Error, Result};
pub use meter::BufferMeter;
pub use scalar::Scalar;
pub use tensor::{DenseTensor, FoldingMap, TtWeight, TtmTable};
pub use tt_linear::{Mode, TtGrads, TtLinear};
pub use ttm_embedding::TtmEmbedding;
