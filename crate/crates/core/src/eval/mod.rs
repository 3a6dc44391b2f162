//! Accuracy metrics, confusion matrices, stratified cross-validation splits
//! and PCA embedding of learned features.

mod cv;
mod metrics;
mod pca;
mod report;

pub use cv::{cv_splits, stratified_subsets, Fold, MIN_CLASS_SIZE, N_SUBSETS};
pub(crate) use metrics::predict_cached;
pub use metrics::{
    argmax, average_confusion, compactness, confusion_matrix, predict, score, ua, ua_from_diagonal,
    wa, wa_from_diagonal, Compactness, ConfusionMatrix, Scores,
};
pub use pca::{pca_embed, symmetric_eigen, write_embedding_tsv, Pca};
pub use report::{EvalReport, FoldScore, ParsedReport};

#[cfg(test)]
mod tests;
