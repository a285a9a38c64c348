#![allow(dead_code)]

use num_complex::Complex64;
use qshws_core::optics::{focal_plane_jpd_separable, FocalPlaneOptions, MicrolensArray, SensorModel, SeparableJpd};
use qshws_core::tensor::{ComplexField4, GridSpec};

pub const PIXEL: f64 = 16e-6;

/// Lens array whose pitch is a whole number of pixels, so lens centers sit on pixel centers
/// when the lens count is odd.
pub fn aligned_mla(lenses: usize, pixels_per_lens: usize) -> MicrolensArray {
    let pitch = pixels_per_lens as f64 * PIXEL;
    MicrolensArray { pitch, aperture_width: pitch - 1e-6, ..MicrolensArray::default() }.with_lenses(lenses, lenses)
}

pub fn sensor_for(mla: &MicrolensArray) -> SensorModel {
    SensorModel::covering(mla, PIXEL)
}

/// Line grid covering the lens array with `per_lens` samples per lens pitch.
pub fn line_for(mla: &MicrolensArray, per_lens: usize) -> GridSpec {
    GridSpec::line(mla.n_lenses_x * per_lens, mla.pitch / per_lens as f64).unwrap()
}

/// X(x₁,x₂) = a₁(x₁)·a₂(x₂) with a(x) = exp(−x²/(2w²) + i(k₀x + c x²/2)).
pub fn product_line(line: &GridSpec, w: f64, p1: (f64, f64), p2: (f64, f64)) -> ComplexField4 {
    let a = |x: f64, (k0, c): (f64, f64)| Complex64::new(-x * x / (2.0 * w * w), k0 * x + c * x * x / 2.0).exp();
    ComplexField4::from_fn(*line, *line, |i, j| a(line.x(i), p1) * a(line.x(j), p2)).unwrap()
}

pub fn separable(x: &ComplexField4, y: &ComplexField4, mla: &MicrolensArray) -> SeparableJpd {
    focal_plane_jpd_separable(x, y, mla, &sensor_for(mla), &FocalPlaneOptions::default()).unwrap()
}

/// Displacement `frac` of the aperture width converted to a wave vector.
pub fn tilt(mla: &MicrolensArray, frac: f64) -> f64 {
    mla.wavevector_for_displacement(frac * mla.aperture_width)
}
