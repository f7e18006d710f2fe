//! Weakly supervised text classification from class surface names alone.
//!
//! Given a raw corpus and one surface name per class, the pipeline
//!
//! 1. segments documents into sentences and builds class-oriented sentence
//!    representations from contextualized word embeddings ([`corpus`],
//!    [`embeddings`], [`class_repr`]),
//! 2. estimates a per-document class distribution through a confidence-weighted
//!    sentence vote ensemble ([`ensemble`]),
//! 3. trains a small self-attention network with a class-weighted contrastive
//!    loss to pool sentences into contextualized document vectors
//!    ([`attention`]),
//! 4. scores documents in a PCA-reduced space, feeds the most confident ones
//!    back into the class representations, and iterates ([`feedback`]),
//! 5. exports the top confident documents per class as a pseudo-training
//!    dataset and drives a pluggable classifier ([`pseudo_dataset`]).
//!
//! [`eval`] and [`synthetic`] provide the measurement harness: micro/macro F1,
//! ablation stages, top-k subset accuracy, and a planted-topic corpus
//! generator used throughout the test suite.

pub mod attention;
pub mod class_repr;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod feedback;
mod numeric;
pub mod pca;
pub mod pipeline;
pub mod pseudo_dataset;
pub mod synthetic;

pub use config::RunConfig;
pub use corpus::{ClassSpec, Document, Sentence};
pub use ensemble::{ClassDistribution, SentenceVote};
pub use error::{Error, Result};

/// 0-based class index. Classes are dense and ordered as in the classes file.
pub type ClassId = usize;
