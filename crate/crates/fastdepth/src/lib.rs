//! File formats, schedule tuning, latency profiling and the command-line
//! front end for the `fastdepth-core` engine.

pub mod cli;
pub mod error;
pub mod parity;
pub mod pnm;
pub mod profiler;
pub mod tuner;
pub mod weights;

pub use error::{Error, Result};
