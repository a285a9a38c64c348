//! Biphoton wave-function simulation and quantum Shack-Hartmann reconstruction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] grids, 4D fields, sparse JPDs and the QSHT file format
//! * [`model`] closed-form double-Gaussian and classically correlated states
//! * [`optics`] microlens forward model and camera frame synthesis
//! * [`estimator`] JPD estimation from frame stacks
//! * [`cpd`] aperture CPDs, centroids and phase gradients
//! * [`reconstruct`] flood-fill phase integration and wave-function assembly
//! * [`analysis`] spherical-phase fits, correlation metrics and report export

pub mod analysis;
pub mod cpd;
mod error;
pub mod estimator;
pub mod fft;
pub mod model;
pub mod optics;
pub mod reconstruct;
pub mod tensor;

pub use error::{Error, FormatError, Result};

/// A non-fatal condition reported alongside a result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let message = message.into();
        log::warn!("{code}: {message}");
        Self { code, message }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}
