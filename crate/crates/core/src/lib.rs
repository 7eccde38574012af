//! Multimodal style search: catalog handling, word and context embeddings,
//! visual features, exact nearest-neighbour search, fusion pipelines, the
//! DeepStyle joint networks and the style-similarity evaluation suite.

pub mod blend;
pub mod catalog;
pub mod deepstyle;
pub mod embed;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod knn;
pub mod par;
pub mod visfeat;

pub use error::{Error, Result};
