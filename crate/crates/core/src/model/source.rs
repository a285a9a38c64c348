use std::f64::consts::PI;

use crate::{Error, Result};

/// Width of the Gaussian that replaces sinc(a x²): exp(−0.455 a x²) ≈ 1/e where sinc first drops to 1/e.
pub const SINC_GAUSSIAN_FACTOR: f64 = 0.455;

/// Degenerate type-I SPDC source imaged by a Fourier lens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdcSource {
    /// Pump waist at the crystal, which sets σ₊ there.
    pub pump_waist: f64,
    pub crystal_thickness: f64,
    /// Pump wave number inside the crystal.
    pub pump_wave_number: f64,
    /// Vacuum wave number of each down-converted photon.
    pub signal_wave_number: f64,
    pub effective_focal_length: f64,
}

impl SpdcSource {
    pub fn new(
        pump_waist: f64,
        crystal_thickness: f64,
        pump_wave_number: f64,
        signal_wave_number: f64,
        effective_focal_length: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("pump_waist", pump_waist),
            ("crystal_thickness", crystal_thickness),
            ("pump_wave_number", pump_wave_number),
            ("signal_wave_number", signal_wave_number),
            ("effective_focal_length", effective_focal_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(Self { pump_waist, crystal_thickness, pump_wave_number, signal_wave_number, effective_focal_length })
    }

    /// Degenerate source from the vacuum pump wavelength and the pump's refractive index in the crystal.
    /// Each photon carries half the pump frequency, so its vacuum wavelength is 2λ_p.
    pub fn degenerate(
        pump_waist: f64,
        crystal_thickness: f64,
        pump_wavelength: f64,
        pump_index: f64,
        effective_focal_length: f64,
    ) -> Result<Self> {
        if !(pump_wavelength > 0.0) || !(pump_index > 0.0) {
            return Err(Error::param("pump_wavelength", "wavelength and index must be positive"));
        }
        Self::new(
            pump_waist,
            crystal_thickness,
            2.0 * PI * pump_index / pump_wavelength,
            PI / pump_wavelength,
            effective_focal_length,
        )
    }

    /// σ₋ at the crystal from the Gaussian approximation of the phase-matching sinc.
    pub fn crystal_sigma_minus(&self) -> f64 {
        (SINC_GAUSSIAN_FACTOR * self.crystal_thickness / self.pump_wave_number).sqrt()
    }
}

/// Double-Gaussian widths at the focal plane of the Fourier lens.
///
/// A lens of focal length f maps a transverse Gaussian of width σ to one of width f/(kσ);
/// the sum and difference components transform independently.
pub fn source_params_at_focal_plane(src: &SpdcSource) -> (f64, f64) {
    let scale = src.effective_focal_length / src.signal_wave_number;
    (scale / src.pump_waist, scale / src.crystal_sigma_minus())
}
