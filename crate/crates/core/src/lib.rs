//! Character- and word-level BiLSTM-CRF sequence tagging with multi-task
//! parameter sharing.

pub mod crf;
pub mod data;
pub mod embeddings;
pub mod eval;
pub mod error;
pub mod lstm;
pub mod math;
pub mod model;
pub mod train;

pub use error::{Error, Result};
