//! Core algorithms for measuring and mitigating gender bias in tabular
//! classification pipelines built on language models.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. Everything that touches the filesystem lives in the companion
//! `fairtab` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cda;
pub mod classify;
pub mod error;
pub mod lm;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod qa;
pub mod serialize;
pub mod table;
pub mod unlearn;

#[cfg(feature = "oracle")]
pub mod oracle;

pub use error::{Error, Result};
