//! Key-conditioned invertible image steganography.
//!
//! A secret RGB image is hidden inside a host image of the same size by a
//! stack of invertible coupling blocks that operate on Haar wavelet
//! coefficients. Every block scrambles the secret pipeline with a private,
//! passphrase-derived key (patch shuffle plus a ±1 mask), so extraction only
//! recovers the secret when the receiver holds the same passphrase.
//!
//! Module map:
//!
//! - [`diffcore`]: fixed-shape tensors and a small reverse-mode tape.
//! - [`keying`]: passphrase → per-block key schedule, encode / decode.
//! - [`wavelet`]: orthonormal single-level Haar DWT / IWT.
//! - [`inn`]: coupling blocks, the invertible stack, checkpoints, the
//!   secret-pipeline divergence report.
//! - [`pipeline`]: pixel-level embed / extract and difference images.
//! - [`training`]: loss, rounding, Adam, training loop, ablation and
//!   attack-simulation harnesses.
//! - [`metrics`]: PSNR, SSIM, APD and pair reports.

pub mod diffcore;
pub mod error;
pub mod inn;
pub mod keying;
pub mod metrics;
pub mod pipeline;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
