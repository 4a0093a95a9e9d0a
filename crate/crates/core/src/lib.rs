//! Spoofed-speech detection over sequences of non-semantic speech embeddings.
//!
//! The pipeline stacks per-chunk embeddings into a `d × t` matrix, runs a
//! residual convolution block, an optional frame-delta step, two LSTM layers,
//! a wide projection, multi-head attention pooling and an MLP head, and
//! scores utterances with the bonafide-minus-spoof logit margin. Evaluation
//! uses the equal error rate.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod detector;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
