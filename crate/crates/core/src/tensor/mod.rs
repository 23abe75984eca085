//! Dense tensors, mode contraction, folding, and the TT / TTM factor
//! containers.

mod checkpoint;
mod dense;
mod folding;
mod tt;
mod ttm;

pub use checkpoint::{Checkpoint, CheckpointEntry, CheckpointHeader};
pub use dense::{contract, DenseTensor};
pub use folding::{flat_index, fold, multi_index, unfold, FoldingMap};
pub use tt::TtWeight;
pub use ttm::TtmTable;
