//! Key-conditioned coupling blocks and the invertible stack built from
//! them.

mod block;
mod checkpoint;
mod divergence;
mod model;
mod subnet;

pub use block::{decay_weight, KeyedBlock, ScaleMode};
pub use checkpoint::FORMAT_VERSION;
pub use divergence::{secret_divergence_report, DivergenceReport, DivergenceRow};
pub use model::{model_forward, model_inverse, ForwardOutput, Model, ModelConfig};
pub use subnet::{Init, Subnet};

#[cfg(test)]
mod tests;
