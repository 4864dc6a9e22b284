//! Multimodal sequence classification with cross-modal attention.
//!
//! The crate is organized bottom-up: a small reverse-mode autodiff engine,
//! feature extraction for word-aligned audio, recurrent encoders, the
//! cross-attention fusion block, the training objective, and a harness for
//! training, evaluation, cross-validation, and ablation studies.

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod encoders;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod objective;

pub use autodiff::{Tensor, PROB_FLOOR};
pub use error::{Error, Result};
