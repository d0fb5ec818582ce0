//! Triplet metric learning and exact content-based retrieval.
//!
//! The crate trains small feed-forward embedders on labeled feature vectors
//! with the opponent-class adaptive margin (OCAM) triplet loss or one of the
//! baseline losses, binarizes embeddings into sign codes, and scores
//! retrieval with leave-one-query-out precision@Z and mAP in Euclidean and
//! Hamming space.
//!
//! Modules, bottom up:
//!
//! - [`metricspace`]: cosine/Euclidean/Hamming distances and sign codes
//! - [`losses`]: OCAM, its ablations and eight baseline losses, with gradients
//! - [`corpus`]: datasets, CSV, synthetic clusters, train/test split
//! - [`embedder`]: MLP, samplers, Adam, training loop, checkpoints
//! - [`index`]: exact top-Z retrieval and index snapshots
//! - [`eval`]: precision@Z / mAP protocol and JSON reports
//! - [`config`], [`pipeline`]: run configuration and end-to-end experiments
//!
//! The `parallel` feature (on by default) runs batch embedding and per-query
//! evaluation on rayon; see [`exec::Execution`].

pub mod config;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod index;
pub mod losses;
pub mod metricspace;
pub mod pipeline;

pub use error::{Error, Result};
