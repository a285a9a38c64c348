use std::f64::consts::PI;

use crate::tensor::{GridSpec, RealField4};
use crate::{Error, Result};

/// Minimum σ₋/σ₊ for which the classical closed forms hold.
const MIN_WIDTH_RATIO: f64 = 10.0;

/// Mixture of product Gaussian states with the same position correlations as the double Gaussian at z = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalCorrelatedState {
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub z: f64,
    pub k: f64,
}

impl ClassicalCorrelatedState {
    pub fn new(sigma_plus: f64, sigma_minus: f64, z: f64, k: f64) -> Result<Self> {
        for (name, v) in [("sigma_plus", sigma_plus), ("sigma_minus", sigma_minus), ("k", k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::param("z", format!("must be >= 0, got {z}")));
        }
        if sigma_minus / sigma_plus < MIN_WIDTH_RATIO {
            return Err(Error::param(
                "sigma_minus",
                format!("classical model needs sigma_minus/sigma_plus >= {MIN_WIDTH_RATIO}"),
            ));
        }
        Ok(Self { sigma_plus, sigma_minus, z, k })
    }

    /// Propagated squared width of each product component.
    fn s(&self) -> f64 {
        let sp2 = self.sigma_plus * self.sigma_plus;
        sp2 + 4.0 * self.z * self.z / (self.k * self.k * sp2)
    }

    /// Normalised per-axis density P(x₁,x₂).
    pub fn axis_density(&self, x1: f64, x2: f64) -> f64 {
        let s = self.s();
        let sm2 = self.sigma_minus * self.sigma_minus;
        let a = sm2 / (2.0 * s * (s + sm2));
        let b = 1.0 / (s + sm2);
        let det = b * (2.0 * a + b);
        let sum = x1 + x2;
        (-(a * sum * sum) - b * (x1 * x1 + x2 * x2)).exp() * det.sqrt() / PI
    }

    /// Pearson coefficient of x₁, x₂ under [`Self::axis_density`]; never positive.
    pub fn axis_pearson(&self) -> f64 {
        let s = self.s();
        let sm2 = self.sigma_minus * self.sigma_minus;
        let a = sm2 / (2.0 * s * (s + sm2));
        let b = 1.0 / (s + sm2);
        -a / (a + b)
    }
}

/// Propagated JPD of the classical state as a product of per-axis densities (normalised to unit integral).
pub fn classical_jpd(state: &ClassicalCorrelatedState, grid1: &GridSpec, grid2: &GridSpec) -> Result<RealField4> {
    let xt: Vec<f64> = (0..grid1.nx)
        .flat_map(|a| (0..grid2.nx).map(move |b| (a, b)))
        .map(|(a, b)| state.axis_density(grid1.x(a), grid2.x(b)))
        .collect();
    let yt: Vec<f64> = (0..grid1.ny)
        .flat_map(|a| (0..grid2.ny).map(move |b| (a, b)))
        .map(|(a, b)| state.axis_density(grid1.y(a), grid2.y(b)))
        .collect();
    RealField4::from_fn(*grid1, *grid2, |p1, p2| {
        let (i1, j1) = grid1.coords(p1);
        let (i2, j2) = grid2.coords(p2);
        xt[i1 * grid2.nx + i2] * yt[j1 * grid2.ny + j2]
    })?
    .with_nonnegative()
}

/// Apparent photon-2 phase gradient of the classical state, in the σ₊ ≪ σ₋ approximation.
pub fn classical_measured_gradient(state: &ClassicalCorrelatedState, x1: f64, x2: f64) -> f64 {
    let (k, z) = (state.k, state.z);
    let sp2 = state.sigma_plus * state.sigma_plus;
    let sm2 = state.sigma_minus * state.sigma_minus;
    0.5 * k * z * ((x1 + x2) / (k * k * sp2 * sp2 / 16.0 + z * z) - (x1 - x2) / (k * k * sp2 * sm2 / 4.0 + z * z))
}
