//! Contrastive pretraining with best-validation checkpointing, frozen-encoder
//! finetuning and F1 evaluation.

mod checkpoint;
mod config;
mod data;
mod finetune;
mod metrics;
mod pretrain;

pub use checkpoint::Checkpoint;
pub use config::{DatasetKind, ExperimentConfig, FinetuneConfig, LossKind, MocoConfig, PretrainConfig};
pub use data::{load_finetune_data, load_pretrain_data, FinetuneData, PretrainData, SegSample};
pub use finetune::{
    class_weights, finetune, finetune_with_data, weighted_cross_entropy, FinetuneMetrics, FinetuneOutcome, LrTrial,
    METRICS_FILE,
};
pub use metrics::{evaluate_f1, f1_report, ConfusionMatrix, F1Report};
pub use pretrain::{
    pretrain, pretrain_with_data, EpochStats, MocoNet, PretrainOutcome, CHECKPOINT_FILE, TRAIN_LOG_FILE, VAL_LOG_FILE,
};
