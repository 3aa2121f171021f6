pub mod cli;
pub mod datagen;
pub mod dist;
pub mod error;
pub mod learn;
pub mod rng;
pub mod samplers;
pub mod sim;
pub mod sampling;
pub mod selection;
pub mod timecost;

pub use error::{Error, Result};
