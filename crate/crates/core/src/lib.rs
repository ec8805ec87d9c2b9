pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mixture;
pub mod partition;
pub mod sampler;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
