pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod downstream;
pub mod error;
pub mod gradcheck;
pub mod masking;
pub mod model;
pub mod nn;
pub mod optim;
mod parallel;
pub mod params;
pub mod recon;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tokenizers;

pub use error::{Error, Result};
