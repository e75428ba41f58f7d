//! Fog-aware self-training for semantic segmentation.
//!
//! The crate covers the whole desk-scale pipeline: physical fog simulation
//! ([`fog`]), per-pixel self-entropy ([`entropy`]), entropy-weighted
//! multi-scale fusion ([`fusion`]), class-balanced pseudo-label selection
//! ([`pseudolabel`]), the training objectives ([`losses`]), a small
//! convolutional network with manual backpropagation ([`net`]), the
//! self-training driver ([`train`]), a procedural two-domain scene generator
//! ([`synth`]), evaluation ([`metrics`]) and the on-disk formats ([`formats`]).

pub mod config;
pub mod entropy;
pub mod error;
pub mod fog;
pub mod formats;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pseudolabel;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
