//! The spectrogram encoder: conv blocks, a bidirectional GRU, FC1 with PReLU
//! producing the feature `z`, and FC2 producing class logits.

mod checkpoint;
mod config;
mod encoder;
mod params;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{ConvLayer, EncoderConfig};
pub use encoder::{
    bi_rnn_compress, classify, cnn_encode, encode, encode_one, EncoderGraph, FeatureBatch,
    GraphCache, SequenceBatch, SpectrogramBatch,
};
pub use params::{
    param_layout, GruSlots, ModelParams, ParamKind, ParamSlots, ParamSpec, PRELU_INIT,
};

#[cfg(test)]
mod tests;
