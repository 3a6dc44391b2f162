//! Discriminative emotion features from variable-length spectrograms.
//!
//! The pipeline turns audio into log STFT or log Mel spectrograms, encodes
//! them with a CNN, bidirectional GRU and two fully-connected layers, and
//! trains the network with class-weighted softmax cross-entropy plus a
//! class-weighted center loss whose class centers follow an exponential
//! moving average.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod kv;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
