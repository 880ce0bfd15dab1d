//! Topic-coherent hierarchical recurrent encoder-decoder for multi-turn dialog
//! response generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: dialog ingestion, vocabulary and dataset splits
//! - [`numerics`]: tensors, reverse-mode autodiff, seeded sampling
//! - [`topics`]: PPMI co-occurrence matrix, NMF topic factors, topic divergence
//! - [`model`]: the hierarchical encoder-decoder with latent and topic terms,
//!   plus its SEQ2SEQ / HRED / VHRED ablations and the trainer
//! - [`decode`]: greedy and beam-search reply generation
//! - [`metrics`]: perplexity, Distinct-n, TopicDiv and the F-beta composite

pub mod corpus;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod topics;

pub use error::{Error, Result};
