//! Framework-free multimodal self-supervised pretraining (masked
//! autoencoding and self-distillation with coding-rate regularization)
//! over a shared 4D patchification, plus a zero-shot image-to-image
//! retrieval evaluation harness. CPU-only, 64-bit floats throughout,
//! with hand-derived gradients validated against finite differences.

pub mod augment;
pub mod data;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod pipeline;
pub mod resample;
pub mod retrieval;
pub mod ssl;
pub mod synthdata;
pub mod util;

pub use error::{Error, Result};
