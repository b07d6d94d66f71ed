//! Variational auto-encoder on MNIST, its repeated generation/recognition
//! dynamics, and the latent-space analyses built on top of them.

pub mod analysis;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod ndcore;
pub mod nn;
pub mod vae;

pub use error::{Error, Result};
pub use ndcore::{Rng, Scalar, Tensor};
