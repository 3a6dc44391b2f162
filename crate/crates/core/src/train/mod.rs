//! Mini-batch training with Adam on the joint loss, with model selection by
//! development-set UA.

mod adam;
mod config;
mod fit;

pub use crate::losses::ClassWeights;
pub use adam::{adam_step, clip_global_norm, AdamState};
pub use config::TrainConfig;
pub use fit::{
    epoch_seed, fit, fit_with, make_batches, Batch, EpochRecord, FitOutput, History,
    IterationRecord, Trainer,
};

/// Loss weights inversely proportional to class counts, mean 1.
pub fn class_weights_from_counts(counts: &[usize]) -> crate::Result<ClassWeights> {
    ClassWeights::from_counts(counts)
}
