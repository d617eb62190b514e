//! Transformer encoders with bidirectional LSTM layers fused into each block,
//! trained with masked-language-model and next-sentence objectives.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode autodiff tape
//! - [`nn`]: parameterized layers (embeddings, attention, feed-forward, LSTM)
//! - [`blocks`]: the four encoder layer types and the encoder stack
//! - [`heads`]: pretraining and fine-tuning heads, including the BLSTM decoder
//! - [`model`]: the pretraining and fine-tuning models
//! - [`data`]: tokenization, sentence pairs, whole-word masking, batching
//! - [`train`]: Adam, the training loops, checkpoints and metrics
//! - [`audit`]: closed-form parameter counting

pub mod audit;
pub mod blocks;
pub mod config;
pub mod data;
mod error;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
