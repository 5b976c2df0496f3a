//! Inference, cost accounting and channel pruning for FastDepth-style
//! monocular depth networks.
//!
//! The crate is `no_std` (with `alloc`) by default so the arithmetic can run
//! anywhere; the `std` feature adds `std::error::Error` impls and the
//! `parallel` feature lets convolution kernels split work across a rayon
//! pool. Timing, file formats and the command-line tool live in the
//! `fastdepth` crate.
//!
//! ```
//! use fastdepth_core::graph::{assemble_network, build_encoder, DecoderKind, EncoderKind};
//! use fastdepth_core::cost::count_graph;
//!
//! let encoder = build_encoder(EncoderKind::MobileNet).unwrap();
//! let net = assemble_network(&encoder, DecoderKind::fastdepth()).unwrap();
//! let report = count_graph(&net);
//! assert!(report.total_macs() > 700_000_000 && report.total_macs() < 780_000_000);
//! ```

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod ops;
pub mod prune;
pub mod schedule;
pub mod tensor;

mod math;

pub use error::{Error, Result};
pub use tensor::{Fill, Tensor, TensorShape};
