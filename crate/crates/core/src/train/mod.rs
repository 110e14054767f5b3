//! Late-fusion backbone, objective, optimizer, training loop and checkpoints.

mod backbone;
mod checkpoint;
mod config;
mod gate;
mod model;
mod optim;
mod run;

pub use backbone::{backbone_forward, backbone_init};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHCK_MAGIC, CHCK_VERSION};
pub use config::{BackboneConfig, ClbConfig, Normalizer, TrainConfig};
pub use gate::{gradient_gate, GateCheck, GATE_OPS};
pub use model::{total_loss, Forward, LossParts, MmdSettings, Model};
pub use optim::{sgd_step, SgdState};
pub use run::{
    accuracy, argmax_rows, corruption_table, evaluate, train, CorruptionTable, EpochMetrics, TrainState, MASK_LEVELS,
    NOISE_LEVELS,
};
