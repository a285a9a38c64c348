use std::f64::consts::PI;

use num_complex::Complex64;

use crate::tensor::{ComplexField4, GridSpec};
use crate::{Error, Result};

/// One transverse axis of a double-Gaussian state; `z` may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Axis {
    sigma_plus: f64,
    sigma_minus: f64,
    z: f64,
    k: f64,
}

impl Axis {
    fn variances(&self) -> (Complex64, Complex64) {
        let iz = Complex64::new(0.0, self.z / self.k);
        (self.sigma_plus * self.sigma_plus + iz, self.sigma_minus * self.sigma_minus + iz)
    }

    #[inline]
    fn exponent(&self, x1: f64, x2: f64) -> Complex64 {
        let (vp, vm) = self.variances();
        let s = x1 + x2;
        let d = x1 - x2;
        -(s * s) / (4.0 * vp) - (d * d) / (4.0 * vm)
    }

    /// Photon-2 derivative of the phase: Im of d/dx₂ of the exponent.
    fn photon2_gradient(&self, x1: f64, x2: f64) -> f64 {
        let kz = self.k * self.z;
        let k2 = self.k * self.k;
        let ap = kz / (k2 * self.sigma_plus.powi(4) + self.z * self.z);
        let am = kz / (k2 * self.sigma_minus.powi(4) + self.z * self.z);
        0.5 * ((x1 + x2) * ap - (x1 - x2) * am)
    }

    /// Coefficient of x₂² in the phase of the conditional wave function.
    fn conditional_curvature(&self) -> f64 {
        let (vp, vm) = self.variances();
        (-1.0 / (4.0 * vp) - 1.0 / (4.0 * vm)).im
    }

    /// Amplitude factor acquired relative to z = 0 by the normalised Gaussian.
    fn prefactor(&self) -> Complex64 {
        let (vp, vm) = self.variances();
        (Complex64::from(self.sigma_plus * self.sigma_plus * self.sigma_minus * self.sigma_minus) / (vp * vm)).sqrt()
    }

    fn line_field(&self, line1: &GridSpec, line2: &GridSpec) -> Result<ComplexField4> {
        check_line(line1)?;
        check_line(line2)?;
        let f = ComplexField4::from_fn(*line1, *line2, |a, b| self.exponent(line1.x(a), line2.x(b)).exp())?;
        Ok(if line1 == line2 { f.with_symmetric()? } else { f })
    }
}

fn check_line(g: &GridSpec) -> Result<()> {
    if g.ny != 1 {
        return Err(Error::GridMismatch(format!("axis fields need line grids (ny == 1), got ny = {}", g.ny)));
    }
    Ok(())
}

fn check_widths(sigma_plus: f64, sigma_minus: f64, k: f64) -> Result<()> {
    for (name, v) in [("sigma_plus", sigma_plus), ("sigma_minus", sigma_minus), ("k", k)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Evaluates X(x₁,x₂)·Y(y₁,y₂) for per-axis parameters.
fn evaluate_axes(ax: &Axis, ay: &Axis, grid1: &GridSpec, grid2: &GridSpec) -> Result<ComplexField4> {
    let xt: Vec<Complex64> = (0..grid1.nx)
        .flat_map(|a| (0..grid2.nx).map(move |b| (a, b)))
        .map(|(a, b)| ax.exponent(grid1.x(a), grid2.x(b)).exp())
        .collect();
    let yt: Vec<Complex64> = (0..grid1.ny)
        .flat_map(|a| (0..grid2.ny).map(move |b| (a, b)))
        .map(|(a, b)| ay.exponent(grid1.y(a), grid2.y(b)).exp())
        .collect();
    let f = ComplexField4::from_fn(*grid1, *grid2, |p1, p2| {
        let (i1, j1) = grid1.coords(p1);
        let (i2, j2) = grid2.coords(p2);
        xt[i1 * grid2.nx + i2] * yt[j1 * grid2.ny + j2]
    })?;
    Ok(if grid1 == grid2 { f.with_symmetric()? } else { f })
}

/// Double-Gaussian biphoton state after free propagation over `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleGaussianState {
    axis: Axis,
}

impl DoubleGaussianState {
    pub fn new(sigma_plus: f64, sigma_minus: f64, z: f64, k: f64) -> Result<Self> {
        check_widths(sigma_plus, sigma_minus, k)?;
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::param("z", format!("must be >= 0, got {z}")));
        }
        Ok(Self { axis: Axis { sigma_plus, sigma_minus, z, k } })
    }

    pub fn from_wavelength(sigma_plus: f64, sigma_minus: f64, z: f64, wavelength: f64) -> Result<Self> {
        Self::new(sigma_plus, sigma_minus, z, 2.0 * PI / wavelength)
    }

    pub fn sigma_plus(&self) -> f64 {
        self.axis.sigma_plus
    }

    pub fn sigma_minus(&self) -> f64 {
        self.axis.sigma_minus
    }

    pub fn z(&self) -> f64 {
        self.axis.z
    }

    pub fn k(&self) -> f64 {
        self.axis.k
    }

    /// Complex variances (v₊, v₋) = (σ₊² + iz/k, σ₋² + iz/k).
    pub fn variances(&self) -> (Complex64, Complex64) {
        self.axis.variances()
    }

    pub fn amplitude(&self, r1: [f64; 2], r2: [f64; 2]) -> Complex64 {
        self.axis.exponent(r1[0], r2[0]).exp() * self.axis.exponent(r1[1], r2[1]).exp()
    }

    /// Unwrapped phase arg ψ.
    pub fn phase(&self, r1: [f64; 2], r2: [f64; 2]) -> f64 {
        (self.axis.exponent(r1[0], r2[0]) + self.axis.exponent(r1[1], r2[1])).im
    }

    /// Gradient of the phase with respect to photon 2's position.
    pub fn photon2_gradient(&self, r1: [f64; 2], r2: [f64; 2]) -> [f64; 2] {
        [self.axis.photon2_gradient(r1[0], r2[0]), self.axis.photon2_gradient(r1[1], r2[1])]
    }

    /// Coefficient A of A|ρ₂|² in the conditional phase; the equivalent spherical wave has radius k/(2A).
    pub fn conditional_curvature(&self) -> f64 {
        self.axis.conditional_curvature()
    }

    /// Amplitude factor relative to z = 0 that the unnormalised form leaves out.
    pub fn propagation_prefactor(&self) -> Complex64 {
        let p = self.axis.prefactor();
        p * p
    }

    /// Distance kσ₊σ₋ at which position amplitudes decorrelate.
    pub fn no_correlation_distance(&self) -> f64 {
        self.axis.k * self.axis.sigma_plus * self.axis.sigma_minus
    }

    /// Unnormalised momentum-space amplitude including the propagation phase.
    pub fn momentum_amplitude(&self, q1: [f64; 2], q2: [f64; 2]) -> Complex64 {
        let (sp2, sm2) = (self.axis.sigma_plus.powi(2), self.axis.sigma_minus.powi(2));
        let s = [q1[0] + q2[0], q1[1] + q2[1]];
        let d = [q1[0] - q2[0], q1[1] - q2[1]];
        let q2sum = q1[0] * q1[0] + q1[1] * q1[1] + q2[0] * q2[0] + q2[1] * q2[1];
        Complex64::new(
            -sp2 * (s[0] * s[0] + s[1] * s[1]) / 4.0 - sm2 * (d[0] * d[0] + d[1] * d[1]) / 4.0,
            -self.axis.z * q2sum / (2.0 * self.axis.k),
        )
        .exp()
    }

    /// Ratio between the continuous Fourier transform of [`Self::amplitude`] and [`Self::momentum_amplitude`].
    pub fn momentum_normalization(&self) -> Complex64 {
        let (vp, vm) = self.variances();
        4.0 * PI * PI * vp * vm
    }

    /// x-part X(x₁,x₂) of the separable state on two line grids.
    pub fn axis_field(&self, line1: &GridSpec, line2: &GridSpec) -> Result<ComplexField4> {
        self.axis.line_field(line1, line2)
    }

    pub fn evaluate(&self, grid1: &GridSpec, grid2: &GridSpec) -> Result<ComplexField4> {
        evaluate_axes(&self.axis, &self.axis, grid1, grid2)
    }
}

/// ψ(ρ₁,ρ₂) = exp(−|ρ₁+ρ₂|²/(4v₊) − |ρ₁−ρ₂|²/(4v₋)), unnormalised, with the symmetric flag set for equal grids.
pub fn evaluate_wavefunction(state: &DoubleGaussianState, grid1: &GridSpec, grid2: &GridSpec) -> Result<ComplexField4> {
    state.evaluate(grid1, grid2)
}

pub fn propagate(state: &DoubleGaussianState, dz: f64) -> Result<DoubleGaussianState> {
    if !(dz >= 0.0 && dz.is_finite()) {
        return Err(Error::param("dz", format!("must be >= 0, got {dz}")));
    }
    DoubleGaussianState::new(state.sigma_plus(), state.sigma_minus(), state.z() + dz, state.k())
}

/// Double-Gaussian state with independent signed propagation distances along x and y.
///
/// A saddle phase −a(x² − y²) on the Fourier plane acts on the double Gaussian exactly as
/// propagation by +z_s along x and −z_s along y, with z_s = 2af²/k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstigmaticState {
    x: Axis,
    y: Axis,
}

impl AstigmaticState {
    pub fn new(sigma_plus: f64, sigma_minus: f64, z_x: f64, z_y: f64, k: f64) -> Result<Self> {
        check_widths(sigma_plus, sigma_minus, k)?;
        if !z_x.is_finite() || !z_y.is_finite() {
            return Err(Error::param("z", "must be finite"));
        }
        Ok(Self { x: Axis { sigma_plus, sigma_minus, z: z_x, k }, y: Axis { sigma_plus, sigma_minus, z: z_y, k } })
    }

    /// State at distance `base.z()` behind the Fourier plane after a saddle of coefficient `a`
    /// on a lens of focal length `f`.
    pub fn from_saddle(base: &DoubleGaussianState, a: f64, f: f64) -> Result<Self> {
        let zs = 2.0 * a * f * f / base.k();
        Self::new(base.sigma_plus(), base.sigma_minus(), base.z() + zs, base.z() - zs, base.k())
    }

    pub fn z_x(&self) -> f64 {
        self.x.z
    }

    pub fn z_y(&self) -> f64 {
        self.y.z
    }

    pub fn amplitude(&self, r1: [f64; 2], r2: [f64; 2]) -> Complex64 {
        self.x.exponent(r1[0], r2[0]).exp() * self.y.exponent(r1[1], r2[1]).exp()
    }

    pub fn phase(&self, r1: [f64; 2], r2: [f64; 2]) -> f64 {
        (self.x.exponent(r1[0], r2[0]) + self.y.exponent(r1[1], r2[1])).im
    }

    pub fn photon2_gradient(&self, r1: [f64; 2], r2: [f64; 2]) -> [f64; 2] {
        [self.x.photon2_gradient(r1[0], r2[0]), self.y.photon2_gradient(r1[1], r2[1])]
    }

    /// Conditional-phase curvature coefficients (A_x, A_y).
    pub fn conditional_curvature(&self) -> [f64; 2] {
        [self.x.conditional_curvature(), self.y.conditional_curvature()]
    }

    pub fn axis_field_x(&self, line1: &GridSpec, line2: &GridSpec) -> Result<ComplexField4> {
        self.x.line_field(line1, line2)
    }

    pub fn axis_field_y(&self, line1: &GridSpec, line2: &GridSpec) -> Result<ComplexField4> {
        self.y.line_field(line1, line2)
    }

    pub fn evaluate(&self, grid1: &GridSpec, grid2: &GridSpec) -> Result<ComplexField4> {
        evaluate_axes(&self.x, &self.y, grid1, grid2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SP: f64 = 13.43e-6;
    const SM: f64 = 1.143e-3;
    const LAMBDA: f64 = 810e-9;

    fn state(z: f64) -> DoubleGaussianState {
        DoubleGaussianState::from_wavelength(SP, SM, z, LAMBDA).unwrap()
    }

    #[test]
    fn origin_is_unity() {
        let a = state(0.0).amplitude([0.0, 0.0], [0.0, 0.0]);
        assert_eq!(a, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn zero_distance_is_real() {
        let g = GridSpec::centered(6, 5, 40e-6).unwrap();
        let f = state(0.0).evaluate(&g, &g).unwrap();
        assert!(f.data().iter().all(|v| v.im == 0.0));
        assert!(f.is_symmetric());
    }

    #[test]
    fn no_correlation_distance_value() {
        let z = state(0.0).no_correlation_distance();
        assert!((z - 0.1191).abs() < 0.0005, "{z}");
    }

    #[test]
    fn factorizes_at_no_correlation_distance() {
        let s0 = state(0.0);
        let s = state(s0.no_correlation_distance());
        let pts = [[1.0e-4, -3.0e-4], [-2.5e-4, 0.7e-4], [4.0e-4, 2.0e-4], [-0.5e-4, -1.2e-4]];
        for &r1 in &pts {
            for &r2 in &pts {
                for &r1p in &pts {
                    for &r2p in &pts {
                        let lhs = s.amplitude(r1, r2).norm_sqr() * s.amplitude(r1p, r2p).norm_sqr();
                        let rhs = s.amplitude(r1, r2p).norm_sqr() * s.amplitude(r1p, r2).norm_sqr();
                        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let s = state(0.07);
        let (r1, r2) = ([1.2e-4, -0.4e-4], [-0.8e-4, 2.0e-4]);
        let h = 1e-9;
        let g = s.photon2_gradient(r1, r2);
        let fdx = (s.phase(r1, [r2[0] + h, r2[1]]) - s.phase(r1, [r2[0] - h, r2[1]])) / (2.0 * h);
        let fdy = (s.phase(r1, [r2[0], r2[1] + h]) - s.phase(r1, [r2[0], r2[1] - h])) / (2.0 * h);
        assert!((g[0] - fdx).abs() < 1e-6 * fdx.abs().max(1.0));
        assert!((g[1] - fdy).abs() < 1e-6 * fdy.abs().max(1.0));
    }

    #[test]
    fn saddle_state_has_opposite_curvatures() {
        let k = 2.0 * PI / LAMBDA;
        let f3 = 0.1;
        let a = k * 0.07 / (2.0 * f3 * f3);
        let s = AstigmaticState::from_saddle(&state(0.0), a, f3).unwrap();
        assert!((s.z_x() - 0.07).abs() < 1e-15 && (s.z_y() + 0.07).abs() < 1e-15);
        let [cx, cy] = s.conditional_curvature();
        assert!(cx > 0.0 && cy < 0.0);
        assert!((cx + cy).abs() < 1e-12 * cx);
    }

    #[test]
    fn propagate_rejects_negative() {
        assert!(propagate(&state(0.0), -1.0).is_err());
        assert_eq!(propagate(&state(0.03), 0.0).unwrap(), state(0.03));
    }

    proptest! {
        #[test]
        fn semigroup(a in 0.0f64..0.2, b in 0.0f64..0.2) {
            let s = state(0.0);
            let ab = propagate(&propagate(&s, a).unwrap(), b).unwrap();
            let direct = propagate(&s, a + b).unwrap();
            prop_assert!((ab.z() - direct.z()).abs() <= 1e-15 * (a + b).max(1e-300));
        }

        #[test]
        fn exchange_symmetric(x1 in -1e-3f64..1e-3, y1 in -1e-3f64..1e-3, x2 in -1e-3f64..1e-3, y2 in -1e-3f64..1e-3, z in 0.0f64..0.2) {
            let s = state(z);
            prop_assert_eq!(s.amplitude([x1, y1], [x2, y2]), s.amplitude([x2, y2], [x1, y1]));
        }
    }
}
