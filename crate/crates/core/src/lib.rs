//! Subword-regularized sequence-to-sequence training and inference that
//! aggregates predictions over several segmentations of the source.

pub mod decode;
pub mod error;
pub mod eval;
pub mod logspace;
pub mod model;
pub mod rng;
pub mod train;
pub mod unigram;

pub use error::{Error, Result};
