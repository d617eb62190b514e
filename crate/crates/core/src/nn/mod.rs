//! Parameterized layers. Every layer holds [`ParamId`](crate::params::ParamId)s
//! into a [`ParamStore`](crate::params::ParamStore) and runs against a
//! [`Graph`](crate::params::Graph).
//!
//! Sequence tensors are `[B, S, H]`; padding masks are flat `B·S` slices
//! where `true` marks a real token.

mod attention;
mod embedding;
mod feed_forward;
mod linear;
mod lstm;

pub use attention::MultiHeadAttention;
pub use embedding::Embeddings;
pub use feed_forward::FeedForward;
pub use linear::{LayerNorm, Linear};
pub use lstm::{Blstm, LstmDirection};
