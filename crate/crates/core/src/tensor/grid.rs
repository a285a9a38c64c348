use crate::{Error, Result};

/// Regular 2D sampling grid; index (i, j) sits at `(origin_x + i*pitch, origin_y + j*pitch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch: f64, origin_x: f64, origin_y: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::param("grid", format!("dimensions must be >= 1, got {nx}x{ny}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::param("grid", format!("pitch must be positive, got {pitch}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::param("grid", "origin must be finite"));
        }
        Ok(Self { nx, ny, pitch, origin_x, origin_y })
    }

    /// Grid symmetric about the optical axis.
    pub fn centered(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        Self::new(nx, ny, pitch, centered_origin(nx, pitch), centered_origin(ny, pitch))
    }

    /// Centered one-dimensional grid (`ny == 1`), used for separable per-axis fields.
    pub fn line(n: usize, pitch: f64) -> Result<Self> {
        Self::centered(n, 1, pitch)
    }

    pub fn is_centered(&self) -> bool {
        self.origin_x == centered_origin(self.nx, self.pitch) && self.origin_y == centered_origin(self.ny, self.pitch)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin_x + i as f64 * self.pitch
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.origin_y + j as f64 * self.pitch
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, row-major in (i, j).
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn coords(&self, flat: usize) -> (usize, usize) {
        (flat / self.ny, flat % self.ny)
    }

    pub fn position(&self, flat: usize) -> [f64; 2] {
        let (i, j) = self.coords(flat);
        [self.x(i), self.y(j)]
    }

    pub fn extent_x(&self) -> f64 {
        self.nx as f64 * self.pitch
    }

    pub fn extent_y(&self) -> f64 {
        self.ny as f64 * self.pitch
    }
}

fn centered_origin(n: usize, pitch: f64) -> f64 {
    -((n - 1) as f64 * pitch) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_grid_is_symmetric() {
        let g = GridSpec::centered(5, 4, 0.5).unwrap();
        assert_eq!(g.x(0), -1.0);
        assert_eq!(g.x(4), 1.0);
        assert_eq!(g.y(0), -0.75);
        assert_eq!(g.y(3), 0.75);
        assert!(g.is_centered());
    }

    #[test]
    fn rejects_degenerate() {
        assert!(GridSpec::new(0, 3, 1.0, 0.0, 0.0).is_err());
        assert!(GridSpec::new(3, 3, 0.0, 0.0, 0.0).is_err());
        assert!(GridSpec::new(3, 3, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn flat_index_round_trip() {
        let g = GridSpec::centered(7, 3, 1.0).unwrap();
        for p in 0..g.len() {
            let (i, j) = g.coords(p);
            assert_eq!(g.index(i, j), p);
        }
    }
}
