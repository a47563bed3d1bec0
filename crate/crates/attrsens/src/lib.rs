//! Attribution-method hyperparameter sensitivity at desk scale: a micro
//! CNN with exact gradients, eight attribution methods, similarity and
//! accuracy metrics, and deterministic sweep protocols.

pub mod attribution;
pub mod config;
pub mod error;
pub mod harness;
pub mod imageops;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
