//! The trainable neural field and its training loop.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod encoding;
pub mod network;
pub mod train;

pub use adam::{adam_step, decayed_lr, Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use encoding::{encoded_len, positional_encoding};
pub use network::{FieldNetwork, NetworkConfig};
pub use train::{
    evaluate_batch, train_scene, BatchOutcome, BatchSettings, FineSamples, LogEntry, LossSwitches, ObjectLosses, ObjectTask, RayBatch,
    TrainConfig, TrainLog, Trainer,
};
