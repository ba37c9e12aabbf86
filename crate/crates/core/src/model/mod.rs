//! Bag classifiers: the attention MIL model, its trainer and checkpoint
//! format, and linear fixtures with closed-form attributions.

pub mod checkpoint;
pub mod linear;
pub mod mil;
pub mod smooth;
pub mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata,
};
pub use linear::{LinearBagModel, SplitLinearBagModel};
pub use mil::{canonical_order, Dense, MilModel, ModelConfig, Prediction};
pub use smooth::TanhBagMlp;
pub use train::{accuracy, train, EpochStats, TrainConfig};
