//! Continual test-time adaptation core.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//! a small reverse-mode autodiff tape, a batch-normalized MLP with a
//! flattened parameter registry, a diagonal SWAG posterior, a seeded
//! synthetic corruption benchmark, the adaptation engine with its
//! baselines, and proper-scoring metrics. File formats, configuration
//! and the command line live in the `petal` companion crate.
//!
//! The `std` feature enables threaded augmentation forwards and the
//! `std::error::Error` impl; `serde` derives (de)serialization for the
//! configuration and schedule types.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod bench;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod swag;
pub mod tensor;
pub mod train;

mod math;

pub use error::{Error, Result};
pub use tensor::Tensor;
