//! Neural building blocks on top of [`crate::autodiff`].

pub mod attention;
pub mod encoder;
pub mod linear;
pub mod lstm;

pub use attention::{attentive_pool, Attended, BlockOutput, MultiHeadAttention, Pooled, TransformerBlock};
pub use encoder::{CrossModalEncoder, EncoderConfig, FusedOutputs, LanguageStream};
pub use linear::{LayerNorm, Linear, LinearStack};
pub use lstm::{BiLstm, LstmCell};
