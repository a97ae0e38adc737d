//! Low-dose fan-beam CT simulation and reconstruction.
//!
//! The crate covers the whole pipeline: ellipse phantoms, a matched
//! Joseph projector pair, Poisson dose simulation, FBP and TV baselines,
//! and per-image unsupervised reconstruction by training a small
//! convolutional network against the measured sinogram.

pub mod dose;
pub mod error;
pub mod fbp;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod tv;

pub use error::{Error, Result};
pub use geometry::{FanBeamGeometry, Image, Sinogram};
