pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod label;
pub mod layers;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::{day_to_level, Level};
