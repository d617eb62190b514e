//! Optimization: Adam, the pretraining and fine-tuning loops, checkpoints
//! and metrics records.

mod adam;
mod checkpoint;
mod finetune;
mod metrics;
mod pretrain;

pub use adam::{Adam, AdamConfig, Schedule};
pub use checkpoint::{Checkpoint, Manifest, RngState, TensorEntry, MAGIC, VERSION};
pub use finetune::{accuracy, FinetuneHyper, Finetuner};
pub use metrics::{FinetuneRecord, MetricsRecord, FINETUNE_HEADER, PRETRAIN_HEADER};
pub use pretrain::{run_rng, sample_examples, PretrainHyper, Pretrainer};
