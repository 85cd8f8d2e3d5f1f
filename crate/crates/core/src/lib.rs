//! Simulation and analysis toolkit for second-order interference of
//! thermal light in tandem unbalanced Mach-Zehnder interferometers.
//!
//! The crate covers the full measurement chain: synthesis of chaotic-light
//! complex envelopes with a prescribed coherence time, propagation through
//! a beam-split pair of unbalanced interferometers, semiclassical
//! photodetection into click time tags, coincidence counting and g²(τ)
//! histogramming, and sinusoidal fringe fitting. Closed-form references
//! (the thermal tandem fringe, the fluctuation-correlation fringe, and an
//! entangled-pair interferometer contrast model) live in [`analytic`].
//!
//! All stochastic operations are pure functions of their parameters and an
//! explicit seed; identical inputs reproduce identical outputs bit for bit.

pub mod analytic;
pub mod config;
pub mod correlator;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod field;
pub mod network;
pub mod seed;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
