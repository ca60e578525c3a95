//! Hierarchical variational autoencoders with bottom-up (VAE) and ladder
//! (LVAE) inference, trained on the warm-up-scaled variational lower bound.

pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod model;
pub mod noise;
pub mod objectives;
pub mod repro;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
