//! Desk-scale stand-ins for a pretrained transformer and its downstream tasks.

mod checkpoint;
mod network;
mod policy;
mod task;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use network::{block_weight_names, Activation, Architecture, ModelSpec, Network};
pub use policy::{build_policy, LayerPolicy};
pub use task::{
    generate_task, Batch, BatchTargets, Dataset, Targets, TaskData, TaskKind, TaskSpec, Teacher,
    HIGH_RESOURCE_SAMPLES, LOW_RESOURCE_SAMPLES, REFERENCE_SAMPLES,
};
pub(crate) use train::check_finite;
pub use train::{
    accuracy, dense_step, evaluate, pretrain_dense, Batcher, PretrainConfig, Pretrained,
};
