//! Microlens-array forward model and single-photon camera frame synthesis.

mod focal;
mod frames;

pub use focal::{focal_plane_jpd, focal_plane_jpd_separable, FocalPlaneOptions, SeparableJpd};
pub use frames::{
    frame_brightness, read_frames, read_frames_file, sample_frames, sample_frames_from, write_frames,
    write_frames_file, FrameStack, PairSampler, SampledPair, QSHF_MAGIC,
};

use std::f64::consts::PI;
use std::ops::Range;

use crate::tensor::GridSpec;
use crate::{Error, Result};

/// Square-lattice microlens array; lens centers sit on a centered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrolensArray {
    pub pitch: f64,
    pub aperture_width: f64,
    pub focal_length: f64,
    pub n_lenses_x: usize,
    pub n_lenses_y: usize,
    pub wavelength: f64,
}

impl Default for MicrolensArray {
    fn default() -> Self {
        Self {
            pitch: 0.3e-3,
            aperture_width: 0.295e-3,
            focal_length: 14.6e-3,
            n_lenses_x: 30,
            n_lenses_y: 30,
            wavelength: 810e-9,
        }
    }
}

impl MicrolensArray {
    pub fn validate(&self) -> Result<()> {
        if !(self.pitch > 0.0) {
            return Err(Error::param("mla.pitch", "must be positive"));
        }
        if !(self.aperture_width > 0.0 && self.aperture_width <= self.pitch) {
            return Err(Error::param("mla.aperture_width", "must lie in (0, pitch]"));
        }
        if !(self.focal_length > 0.0) {
            return Err(Error::param("mla.focal_length", "must be positive"));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::param("mla.wavelength", "must be positive"));
        }
        if self.n_lenses_x == 0 || self.n_lenses_y == 0 {
            return Err(Error::param("mla.n_lenses", "must be >= 1"));
        }
        Ok(())
    }

    pub fn with_lenses(mut self, nx: usize, ny: usize) -> Self {
        self.n_lenses_x = nx;
        self.n_lenses_y = ny;
        self
    }

    pub fn k(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Lens centers.
    pub fn lens_grid(&self) -> Result<GridSpec> {
        GridSpec::centered(self.n_lenses_x, self.n_lenses_y, self.pitch)
    }

    /// Focal-plane spot displacement for a transverse wave-vector component.
    pub fn displacement_for_wavevector(&self, q: f64) -> f64 {
        self.focal_length * (q / self.k()).asin().tan()
    }

    /// Transverse wave vector (2π/λ)·sin(arctan(Δρ/f)) for a spot displacement.
    pub fn wavevector_for_displacement(&self, d: f64) -> f64 {
        self.k() * (d / self.focal_length).atan().sin()
    }

    /// Largest measurable |k|: a spot at the corner of the aperture.
    pub fn max_wavevector(&self) -> f64 {
        self.wavevector_for_displacement(self.aperture_width * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Sinusoidal modulation of the mean pair rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub amplitude: f64,
    pub period_frames: f64,
}

impl Drift {
    pub const NONE: Drift = Drift { amplitude: 0.0, period_frames: 1.0 };

    pub fn factor(&self, frame: u64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * frame as f64 / self.period_frames).sin()
    }
}

/// Binary single-photon camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub pixel_pitch: f64,
    pub width: usize,
    pub height: usize,
    pub threshold_rate: f64,
    pub dark_count_prob: f64,
    pub drift: Drift,
    /// Probability that a registered pixel spawns one spurious count 1..=8 pixels further along +x.
    pub line_correlation: f64,
}

/// Maximum +x offset of a spurious same-row count.
pub const LINE_ARTIFACT_REACH: usize = 8;

impl Default for SensorModel {
    fn default() -> Self {
        Self::covering(&MicrolensArray::default(), 16e-6)
    }
}

impl SensorModel {
    /// Ideal sensor just large enough to cover the lens array.
    pub fn covering(mla: &MicrolensArray, pixel_pitch: f64) -> Self {
        let w = (mla.n_lenses_x as f64 * mla.pitch / pixel_pitch - 1e-9).ceil() as usize;
        let h = (mla.n_lenses_y as f64 * mla.pitch / pixel_pitch - 1e-9).ceil() as usize;
        Self {
            pixel_pitch,
            width: w,
            height: h,
            threshold_rate: 1.0,
            dark_count_prob: 0.0,
            drift: Drift::NONE,
            line_correlation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch > 0.0) {
            return Err(Error::param("sensor.pixel_pitch", "must be positive"));
        }
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::param("sensor.size", "width and height must be in 1..=65535"));
        }
        if !(0.0..=1.0).contains(&self.threshold_rate) {
            return Err(Error::param("sensor.threshold_rate", "must be a probability"));
        }
        if !(0.0..1.0).contains(&self.dark_count_prob) {
            return Err(Error::param("sensor.dark_count_prob", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.line_correlation) {
            return Err(Error::param("sensor.line_correlation", "must lie in [0, 1)"));
        }
        if !(self.drift.amplitude >= 0.0 && self.drift.amplitude <= 1.0 && self.drift.period_frames > 0.0) {
            return Err(Error::param("sensor.drift", "amplitude in [0, 1], positive period"));
        }
        Ok(())
    }

    pub fn pixel_grid(&self) -> Result<GridSpec> {
        GridSpec::centered(self.width, self.height, self.pixel_pitch)
    }

    /// Centered sub-array of `nx` x `ny` lenses and the pixels behind it.
    ///
    /// Returns the reduced lens array, the reduced sensor and the kept pixel index ranges. Pixels are
    /// kept when their center lies inside the window, so the reduced pixel grid stays centered.
    pub fn lens_window(&self, mla: &MicrolensArray, nx: usize, ny: usize) -> Result<LensWindow> {
        if nx == 0 || ny == 0 || nx > mla.n_lenses_x || ny > mla.n_lenses_y {
            return Err(Error::param(
                "window",
                format!("{nx}x{ny} lenses not inside {}x{}", mla.n_lenses_x, mla.n_lenses_y),
            ));
        }
        if !(mla.n_lenses_x - nx).is_multiple_of(2) || !(mla.n_lenses_y - ny).is_multiple_of(2) {
            return Err(Error::param("window", "lens count parity must match the array so the window stays centered"));
        }
        let keep = |n_pix: usize, n_lens: usize| -> Range<usize> {
            let half = n_lens as f64 * mla.pitch / 2.0;
            let c = (n_pix as f64 - 1.0) / 2.0;
            // Largest symmetric offset m with m·pitch < half (measured from the central pixel or pixel pair).
            let m = ((half / self.pixel_pitch) - (c - c.floor()) - 1e-9).floor().max(0.0);
            let lo = (c - c.fract() - m).max(0.0) as usize;
            let hi = ((c + c.fract() + m) as usize + 1).min(n_pix);
            lo..hi
        };
        let xs = keep(self.width, nx);
        let ys = keep(self.height, ny);
        if xs.start >= xs.end || ys.start >= ys.end {
            return Err(Error::param("window", "no pixels inside the lens window"));
        }
        let sensor = SensorModel { width: xs.len(), height: ys.len(), ..*self };
        Ok(LensWindow { mla: mla.with_lenses(nx, ny), sensor, xs, ys })
    }
}

/// A centered lens sub-array together with the sensor region behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct LensWindow {
    pub mla: MicrolensArray,
    pub sensor: SensorModel,
    pub xs: Range<usize>,
    pub ys: Range<usize>,
}
