//! Bag-of-vector embeddings of labeled sentence graphs.
//!
//! A corpus of dependency-parsed sentences is turned into per-sentence
//! property matrices `W_s` and relation tensors `X_s`, which are factorized
//! as `W_s ≈ P·E_sᵀ` and `X_s ≈ E_s·R·E_sᵀ`. Training learns the type
//! embeddings `P` and `R`; inference recovers token embeddings `E_s` for new
//! sentences with `P` and `R` frozen. Bags of token vectors are then compared
//! by cosine alignment.

pub mod als;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod scoring;
pub mod sgd;
pub mod synth;

pub use error::{BoveError, Result};
