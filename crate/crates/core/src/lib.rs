//! Local elasticity of neural networks.
//!
//! Trains small fully connected networks with single-example SGD, measures
//! how an update at one input moves predictions elsewhere, and clusters data
//! by those prediction-change similarities.

pub mod cli;
pub mod clustering;
pub mod data_io;
pub mod elasticity;
pub mod error;
pub mod manifolds;
pub mod nn;

pub use error::{Error, Result};
