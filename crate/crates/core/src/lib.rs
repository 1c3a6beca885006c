#![no_std]
extern crate alloc;

pub mod contamination;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod mds;
pub mod metrics;
pub mod nn;
pub mod optimize;
pub mod rng;
pub mod serial;
pub mod simulators;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
