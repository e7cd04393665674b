//! Core algorithms for dynamic-intent engagement forecasting.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the filesystem, threads or a command line lives in the companion `digmn`
//! crate; this one holds the data model, the synthetic corpus generator, LDA
//! intent mining, the hand-differentiated network kernels, the assembled
//! model, and the training / evaluation loop.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod digmn;
pub mod domain;
pub mod error;
pub mod intent;
pub mod lda;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod pca;
pub mod syngen;
pub mod train;

pub use error::{Error, Result};
