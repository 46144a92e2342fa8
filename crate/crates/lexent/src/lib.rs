//! Toolkit for studying how pretrained word embeddings interact with model
//! initialization and optimization on word-level entailment tasks.
//!
//! The pieces fit together as a pipeline:
//!
//! 1. [`embedding`] loads, generates, and normalizes embedding matrices.
//! 2. [`retrofit`] pulls embeddings toward a lexical neighbor graph.
//! 3. [`init`] produces Gaussian and block-orthogonal weight matrices.
//! 4. [`search`] runs two-stage annealed random hyperparameter search.
//! 5. [`negation`] generates recursively negated entailment datasets.
//! 6. [`model`] is a from-scratch multi-layer LSTM encoder/decoder
//!    classifier with local dot-product attention and manual gradients.
//! 7. [`train`] drives mini-batch SGD with gradient clipping, learning-rate
//!    decay, and an embedding unfreeze schedule.
//!
//! Everything is seeded and deterministic; see the guide in `book/` for a
//! narrative walk-through of each stage.

pub mod data;
pub mod embedding;
pub mod init;
pub mod model;
pub mod negation;
pub mod retrofit;
pub mod search;
pub mod train;

mod seeding;

pub use seeding::derive_seed;
