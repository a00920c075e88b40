//! Communication-assisted EPR-steering bounds, calibration and photon-counting
//! simulation.
//!
//! The crate is organized bottom-up:
//!
//! - [`bloch`]: Bloch-sphere vectors, rotations and the waveplate pipeline.
//! - [`measurement`]: Bob's trusted measurement settings.
//! - [`bounds`]: the exhaustive cheating-strategy search and gain optimization.
//! - [`conservative`]: worst-case rotation of tomographic estimates.
//! - [`tomography`]: maximum-likelihood and bootstrapped axis tomography.
//! - [`efficiency`]: heralding-efficiency estimation from rates.
//! - [`experiment`]: trial simulation and the experimental inequality test.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bloch;
pub mod bounds;
pub mod cli;
pub mod conservative;
pub mod efficiency;
pub mod error;
pub mod experiment;
pub mod measurement;
pub mod tomography;

pub use bloch::BlochVector;
pub use bounds::{BoundResult, CheatStrategy, FenellaEnsemble, GainOptimum, StrategyTable};
pub use error::{Error, Result};
pub use measurement::MeasurementSet;

/// Crate version, recorded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
