//! Multimodal fusion classifiers over precomputed text/image feature vectors.
//!
//! The crate provides the numeric substrate (dense matrices and a
//! reverse-mode tape), the fusion models (gated, cross-attentive, and their
//! combination, plus the unimodal/concatenation/self-attention baselines),
//! dataset ingestion with average-image imputation, Adam training with early
//! stopping, macro-averaged evaluation, and the modality-contribution
//! analyses. The `mmfuse` binary wires everything into reproducible runs.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod matrix;
pub mod models;
pub mod rng;
pub mod runner;
pub mod tape;
pub mod train;

pub use error::Error;
pub use matrix::{Matrix, Precision, Scalar};
