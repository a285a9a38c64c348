use num_complex::Complex64;

use super::GridSpec;
use crate::{Error, Result};

/// Element types storable in a 4D field.
pub trait Scalar: Copy + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn zero() -> Self;
    fn is_finite_value(&self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Value per photon-pair position, row-major in (i1, j1, i2, j2).
#[derive(Debug, Clone, PartialEq)]
pub struct Field4<T> {
    grid1: GridSpec,
    grid2: GridSpec,
    data: Vec<T>,
    symmetric: bool,
    nonnegative: bool,
}

pub type ComplexField4 = Field4<Complex64>;
pub type RealField4 = Field4<f64>;

impl<T: Scalar> Field4<T> {
    pub fn new(grid1: GridSpec, grid2: GridSpec, data: Vec<T>) -> Result<Self> {
        let n = grid1.len() * grid2.len();
        if data.len() != n {
            return Err(Error::GridMismatch(format!(
                "data length {} does not match grids ({}x{}) x ({}x{})",
                data.len(),
                grid1.nx,
                grid1.ny,
                grid2.nx,
                grid2.ny
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::param("field", format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { grid1, grid2, data, symmetric: false, nonnegative: false })
    }

    pub fn zeros(grid1: GridSpec, grid2: GridSpec) -> Self {
        Self { grid1, grid2, data: vec![T::zero(); grid1.len() * grid2.len()], symmetric: false, nonnegative: false }
    }

    /// Builds a field from `f(p1, p2)` where `p1`, `p2` are flat per-photon indices.
    pub fn from_fn(grid1: GridSpec, grid2: GridSpec, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let n2 = grid2.len();
        let mut data = Vec::with_capacity(grid1.len() * n2);
        for p1 in 0..grid1.len() {
            for p2 in 0..n2 {
                data.push(f(p1, p2));
            }
        }
        Self::new(grid1, grid2, data)
    }

    pub fn grid1(&self) -> &GridSpec {
        &self.grid1
    }

    pub fn grid2(&self) -> &GridSpec {
        &self.grid2
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.grid1.nx, self.grid1.ny, self.grid2.nx, self.grid2.ny]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access clears the symmetry and sign flags since they can no longer be vouched for.
    pub fn data_mut(&mut self) -> &mut [T] {
        self.symmetric = false;
        self.nonnegative = false;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn flat(&self, i1: usize, j1: usize, i2: usize, j2: usize) -> usize {
        self.grid1.index(i1, j1) * self.grid2.len() + self.grid2.index(i2, j2)
    }

    #[inline]
    pub fn get(&self, i1: usize, j1: usize, i2: usize, j2: usize) -> T {
        self.data[self.flat(i1, j1, i2, j2)]
    }

    #[inline]
    pub fn at(&self, p1: usize, p2: usize) -> T {
        self.data[p1 * self.grid2.len() + p2]
    }

    /// Row of photon-2 values for photon 1 at flat index `p1`.
    pub fn row(&self, p1: usize) -> &[T] {
        let n2 = self.grid2.len();
        &self.data[p1 * n2..(p1 + 1) * n2]
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    /// Sets the exchange-symmetry flag after verifying exact symmetry.
    pub fn with_symmetric(mut self) -> Result<Self> {
        if self.grid1 != self.grid2 {
            return Err(Error::GridMismatch("symmetric flag requires grid1 == grid2".into()));
        }
        let n = self.grid1.len();
        for p1 in 0..n {
            for p2 in (p1 + 1)..n {
                if self.data[p1 * n + p2] != self.data[p2 * n + p1] {
                    return Err(Error::param("field", format!("not exchange symmetric at pixel pair ({p1}, {p2})")));
                }
            }
        }
        self.symmetric = true;
        Ok(self)
    }

    pub(crate) fn set_flags_unchecked(&mut self, symmetric: bool, nonnegative: bool) {
        self.symmetric = symmetric;
        self.nonnegative = nonnegative;
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Result<Field4<U>> {
        Field4::new(self.grid1, self.grid2, self.data.iter().map(|&v| f(v)).collect())
    }
}

impl RealField4 {
    pub fn with_nonnegative(mut self) -> Result<Self> {
        if let Some(pos) = self.data.iter().position(|&v| v < 0.0) {
            return Err(Error::param("field", format!("negative value at flat index {pos}")));
        }
        self.nonnegative = true;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl ComplexField4 {
    pub fn modulus_squared(&self) -> RealField4 {
        let mut out = RealField4 {
            grid1: self.grid1,
            grid2: self.grid2,
            data: self.data.iter().map(|v| v.norm_sqr()).collect(),
            symmetric: false,
            nonnegative: true,
        };
        out.symmetric = self.symmetric;
        out
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Value per position of a single photon.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2<T> {
    grid: GridSpec,
    data: Vec<T>,
}

impl<T: Scalar> Field2<T> {
    pub fn new(grid: GridSpec, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "data length {} does not match grid {}x{}",
                data.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::param("field", format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![T::zero(); grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                data.push(f(i, j));
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.grid.index(i, j);
        self.data[k] = v;
    }
}

impl Field2<f64> {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Which photon's coordinate is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photon {
    First,
    Second,
}

/// Conditional slice: ψ(·, ρ_fixed) when photon 2 is fixed, ψ(ρ_fixed, ·) when photon 1 is.
pub fn slice_conditional<T: Scalar>(
    field: &Field4<T>,
    fixed_photon: Photon,
    fixed_index: (usize, usize),
) -> Result<Field2<T>> {
    let (i, j) = fixed_index;
    match fixed_photon {
        Photon::First => {
            let g = field.grid1;
            if i >= g.nx || j >= g.ny {
                return Err(Error::IndexOutOfRange(format!("({i}, {j}) outside {}x{} grid", g.nx, g.ny)));
            }
            Field2::new(field.grid2, field.row(g.index(i, j)).to_vec())
        }
        Photon::Second => {
            let g = field.grid2;
            if i >= g.nx || j >= g.ny {
                return Err(Error::IndexOutOfRange(format!("({i}, {j}) outside {}x{} grid", g.nx, g.ny)));
            }
            let p2 = g.index(i, j);
            let data = (0..field.grid1.len()).map(|p1| field.at(p1, p2)).collect();
            Field2::new(field.grid1, data)
        }
    }
}
