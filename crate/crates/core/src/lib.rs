pub mod config;
pub mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod priors;
pub mod rng;
pub mod samplers;
pub mod volume;

pub use error::{Error, Result};
