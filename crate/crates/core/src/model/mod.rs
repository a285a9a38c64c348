//! Closed-form biphoton states, free-space propagation and SLM modulation.

mod classical;
mod double_gaussian;
mod propagation;
mod source;

pub use classical::{classical_jpd, classical_measured_gradient, ClassicalCorrelatedState};
pub use double_gaussian::{evaluate_wavefunction, propagate, AstigmaticState, DoubleGaussianState};
pub use propagation::{
    apply_slm_phase, fourier_lens, modulated_anticorrelated_field, propagate_numeric, saddle_coefficient, saddle_phase,
    PropagationOptions,
};
pub use source::{source_params_at_focal_plane, SpdcSource, SINC_GAUSSIAN_FACTOR};

/// Wave number for a vacuum wavelength.
pub fn wave_number(wavelength: f64) -> f64 {
    2.0 * std::f64::consts::PI / wavelength
}
