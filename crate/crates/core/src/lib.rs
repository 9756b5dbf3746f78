//! Contrastive predictive coding for wearable accelerometer data.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: tensors, reverse-mode differentiation, Adam, seeded RNG
//! - [`models`]: encoders, aggregators and classifier heads
//! - [`cpc`]: bilinear scoring and the two InfoNCE variants
//! - [`data`]: CSV ingestion, resampling, windowing, normalisation, folds,
//!   limited-label sampling and a synthetic generator
//! - [`harness`]: pretraining, frozen-backbone fine-tuning, cross-validation,
//!   random search and macro-F1

pub mod cpc;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod models;

pub use error::{Error, Result};
