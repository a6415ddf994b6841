//! Hierarchical patent classification with a transformer encoder feeding a
//! convolutional head, plus static-embedding baselines.
//!
//! The pipeline: [`corpus`] ingests and labels records, [`tokenizer`] turns
//! abstracts into fixed-length id sequences, [`encoder`] produces per-layer
//! sentence vectors, [`cnn_head`] classifies the stacked top layers, and
//! [`hierarchy`] trains one section model plus one class model per section.

pub mod baselines;
pub mod classifier;
pub mod cli;
pub mod cnn_head;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod hierarchy;
pub mod numerics;
pub mod rng;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
