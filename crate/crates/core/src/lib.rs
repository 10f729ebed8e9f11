//! Lattice randomized quantizers whose quantization error is an exact draw
//! from a Gaussian or Laplace privacy noise, plus the codec, privacy
//! accountant and federated-learning simulator built on them.

pub mod analysis;
pub mod cli;
pub mod codec;
pub mod error;
pub mod flsim;
pub mod lattice;
pub mod noise;
pub mod privacy;
pub mod quantizers;
pub mod randomness;
pub mod stats;

pub use error::{Error, Result};
