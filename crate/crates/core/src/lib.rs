//! Pseudo-spectral simulation of SPDEs with transport noise on the periodic
//! torus: passive scalars in 2D/3D and the 2D Navier-Stokes equations in
//! vorticity and velocity form, together with the Monte Carlo experiment
//! harness that measures anomalous dissipation, scaling limits toward the
//! enhanced-diffusion equations, and the behaviour of the velocity-form Ito
//! corrector.
//!
//! The numerical core is generic over the floating-point scalar (`f32` or
//! `f64`) through [`scalar::Scalar`]; the experiment harness and CLI run in
//! `f64`.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod field;
pub mod grid;
pub mod noise;
pub mod report;
pub mod scalar;

pub use error::{ConfigError, FieldError, NoiseError, SimError};
pub use field::{Channel, SpectralField};
pub use grid::{mode2, mode3, Grid, Mode};
pub use scalar::Scalar;

/// Concrete single-precision field type.
pub type Field32 = SpectralField<f32>;
/// Concrete double-precision field type, used throughout the harness.
pub type Field64 = SpectralField<f64>;
