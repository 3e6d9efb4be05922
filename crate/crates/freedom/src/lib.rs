//! Multimodal graph recommender built around a frozen item-item graph.
//!
//! The pipeline: per-modality cosine kNN graphs are built once from item
//! features, normalized, fused, and never updated; the user-item graph is
//! re-pruned every epoch with degree-sensitive edge sampling; linear graph
//! propagation over both produces the representations scored by inner
//! product and trained with a BPR objective plus lightweight modality
//! projections.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod interaction;
pub mod io;
pub mod modality;
pub mod model;
pub mod prepare;
pub mod sparse;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
