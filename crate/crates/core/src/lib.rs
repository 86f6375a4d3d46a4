//! Neural emulation of Gaussian Wigner-function dynamics for the 1-D
//! harmonic oscillator.
//!
//! - [`oracle`]: closed-form evolution of the packet mean and widths, Gaussian
//!   Wigner evaluation on phase-space grids, and an RK4 cross-check.
//! - [`dataset`]: seeded sampling of `(x0, p0, sigma_x0, hbar)`, oracle
//!   labelling, 80/10/10 splits and CSV storage.
//! - [`mlp`]: dense/ReLU/batchnorm network with exact backprop, Adam and
//!   finite-difference gradient checking.
//! - [`trainer`]: mini-batch training with early stopping.
//! - [`experiments`]: the ħ sweep and phase-space grids.
//! - [`config`]: the TOML run configuration used by the `wignernet` binary.

pub mod config;
pub mod dataset;
pub mod emulator;
pub mod error;
pub mod experiments;
pub mod mlp;
pub mod oracle;
pub mod trainer;

pub use emulator::{AnalyticEmulator, Emulator};
pub use error::{Error, Result};
