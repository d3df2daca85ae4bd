//! Finite-rate-of-innovation reconstruction of Dirac streams.
//!
//! The crate covers the classical subspace pipeline (moments, Cadzow/PWGD
//! denoising, Prony), a small reverse-mode autodiff engine, a deep-unfolded
//! PWGD denoiser, the FRIED-Net encoder/decoder and a calcium-imaging spike
//! detector. See the `examples/` directory for end-to-end usage.

pub mod calcium;
pub mod error;
pub mod experiment;
pub mod friednet;
pub mod kernels;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod signal_model;
pub mod spectral;
pub mod unfolded;

pub use error::{FriError, Result};
