//! Process tomography of a two-ion Mølmer-Sørensen gate.
//!
//! The crate compiles the single-addressing tomography protocol into abstract
//! pulse sequences and simulates the resulting fluorescence counts. From counts
//! it reconstructs physical χ matrices by maximum likelihood, which are then
//! scored against the ideal gate and a depolarizing-noise model.

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod msgate;
pub mod noise;
pub mod optim;
pub mod protocol;
pub mod qcore;
pub mod simulator;
pub mod tomography;

pub use error::{Error, Result};
