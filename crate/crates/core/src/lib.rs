//! Forward simulator and inverse analysis pipeline for absorption imaging of a
//! single trapped atom.
//!
//! The crate is organized bottom-up:
//!
//! * [`photophysics`] - the ideal two-level scatterer and derived radiometry.
//! * [`imaging`] - illumination, shadow, optical train and camera noise; frame I/O.
//! * [`analysis`] - signal/reference normalization, bandpass filtering, 2D Gaussian
//!   fitting, SNR and diverted power.
//! * [`curvefit`] - weighted Levenberg-Marquardt and the spectroscopic scan models.

pub mod analysis;
pub mod curvefit;
pub mod grid;
pub mod imaging;
mod json;
pub mod photophysics;
pub mod rng;
pub mod units;

pub use grid::Grid;
