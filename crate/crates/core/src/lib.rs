//! Sentiment grammars layered on a binary Tree-LSTM.
//!
//! Three structured layers share one encoder: a weighted grammar (WG), a
//! latent-variable grammar with discrete subtypes (LVG) and a Gaussian-mixture
//! latent-vector grammar (LVeG). Inference is exact inside–outside over the
//! gold skeleton; decoding is max-rule-product; training minimizes the
//! negative log conditional likelihood of gold labeled trees.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod grammar;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod synthetic;
pub mod training;
pub mod treebank;

pub use error::{Error, Result};
