//! Tensorized transformer encoder and its training loop.

pub mod config;
pub mod data;
pub mod dense;
pub mod encoder;
pub mod nn;
pub mod train;
pub mod transformer;

pub use config::{EmbeddingConfig, SyntheticConfig, TrainConfig};
pub use data::{Example, SynthSpec};
pub use dense::DenseLinear;
pub use encoder::EncoderBlock;
pub use nn::LayerNorm;
pub use train::{build_model, load_dataset, metrics_csv, train_epoch, EpochMetrics, METRICS_HEADER};
pub use transformer::{Output, StepStats, Transformer};
