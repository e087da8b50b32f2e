//! Fourier neural operator surrogate for two-phase interface evolution.
//!
//! The crate generates interface-transport data from prescribed flows,
//! trains a Fourier neural operator on signed distance-like fields, and
//! evaluates it with the usual regression metrics.

pub mod datagen;
pub mod error;
pub mod field_fft;
pub mod interface;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;

pub use error::{Error, Result};
