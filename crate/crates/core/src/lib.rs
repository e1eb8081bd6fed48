//! Blind deconvolution of PET-like images.
//!
//! Jointly estimates a point-spread function and a restored image from one
//! blurred, noisy observation using total-variation regularization and a
//! region of known constant activity, then deconvolves with the estimated
//! PSF.

pub mod error;
pub mod estimate;
pub mod fftconv;
pub mod grid;
pub mod metrics;
pub mod pgrid;
pub mod phantom;
pub mod prox;
pub mod solver;

pub use error::{Error, Result};
pub use fftconv::Psf;
pub use grid::{GradientField, Image, RegionMask};
