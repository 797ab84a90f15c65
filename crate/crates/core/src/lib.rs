pub mod autodiff;
pub mod config;
pub mod eeg;
pub mod model;
mod error;
pub mod rng;
pub mod signal;
pub mod train;

pub use error::{BasenError, Result};
