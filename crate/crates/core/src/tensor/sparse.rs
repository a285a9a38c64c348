use super::{GridSpec, RealField4};
use crate::{Error, Result};

const MAX_AXIS: usize = u16::MAX as usize;

/// Packs a pixel-pair index (i1, j1, i2, j2) into 4x16 bits, i1 in the high word.
#[inline]
pub fn pack_key(idx: [usize; 4]) -> u64 {
    ((idx[0] as u64) << 48) | ((idx[1] as u64) << 32) | ((idx[2] as u64) << 16) | idx[3] as u64
}

#[inline]
pub fn unpack_key(key: u64) -> [usize; 4] {
    [(key >> 48) as usize, ((key >> 32) & 0xffff) as usize, ((key >> 16) & 0xffff) as usize, (key & 0xffff) as usize]
}

/// Sparse joint distribution over pairs of sensor pixels.
///
/// Entries are kept sorted by packed key, which is also row-major order,
/// so the row of a given first pixel is one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJpd {
    grid: GridSpec,
    entries: Vec<(u64, f64)>,
}

impl SparseJpd {
    pub fn empty(grid: GridSpec) -> Result<Self> {
        check_grid(&grid)?;
        Ok(Self { grid, entries: Vec::new() })
    }

    /// Collects entries, summing duplicates and dropping exact zeros.
    pub fn new(grid: GridSpec, entries: impl IntoIterator<Item = ([usize; 4], f64)>) -> Result<Self> {
        check_grid(&grid)?;
        let mut keyed = Vec::new();
        for (idx, v) in entries {
            if idx[0] >= grid.nx || idx[1] >= grid.ny || idx[2] >= grid.nx || idx[3] >= grid.ny {
                return Err(Error::IndexOutOfRange(format!("{idx:?} outside {}x{} pixel grid", grid.nx, grid.ny)));
            }
            if !v.is_finite() {
                return Err(Error::param("sparse jpd", format!("non-finite value at {idx:?}")));
            }
            keyed.push((pack_key(idx), v));
        }
        keyed.sort_by_key(|e| e.0);
        let mut merged: Vec<(u64, f64)> = Vec::with_capacity(keyed.len());
        for (k, v) in keyed {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Ok(Self { grid, entries: merged })
    }

    /// Takes entries already sorted by strictly increasing key.
    pub fn from_sorted(grid: GridSpec, entries: Vec<(u64, f64)>) -> Result<Self> {
        check_grid(&grid)?;
        for (n, w) in entries.windows(2).enumerate() {
            if w[0].0 >= w[1].0 {
                return Err(Error::param("sparse jpd", format!("keys not strictly increasing at entry {}", n + 1)));
            }
        }
        for &(k, v) in &entries {
            let idx = unpack_key(k);
            if idx[0] >= grid.nx || idx[1] >= grid.ny || idx[2] >= grid.nx || idx[3] >= grid.ny {
                return Err(Error::IndexOutOfRange(format!("{idx:?} outside {}x{} pixel grid", grid.nx, grid.ny)));
            }
            if !v.is_finite() {
                return Err(Error::param("sparse jpd", format!("non-finite value at {idx:?}")));
            }
        }
        Ok(Self { grid, entries })
    }

    pub fn pixel_grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Same entries on a centered grid with a different pixel pitch.
    pub fn with_pixel_pitch(mut self, pitch: f64) -> Result<Self> {
        self.grid = GridSpec::centered(self.grid.nx, self.grid.ny, pitch)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        let key = pack_key(idx);
        match self.entries.binary_search_by_key(&key, |e| e.0) {
            Ok(n) => self.entries[n].1,
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        self.entries.iter().map(|&(k, v)| (unpack_key(k), v))
    }

    /// Entries whose first pixel has flat index `p1`.
    pub fn row(&self, p1: usize) -> &[(u64, f64)] {
        let (i, j) = self.grid.coords(p1);
        let lo = pack_key([i, j, 0, 0]);
        let hi = lo + (1u64 << 32);
        let a = self.entries.partition_point(|e| e.0 < lo);
        let b = self.entries.partition_point(|e| e.0 < hi);
        &self.entries[a..b]
    }

    /// Flat second-pixel index of a packed key.
    #[inline]
    pub fn second_pixel(&self, key: u64) -> usize {
        let idx = unpack_key(key);
        self.grid.index(idx[2], idx[3])
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn transpose(&self) -> Self {
        let entries = self.iter().map(|(idx, v)| ([idx[2], idx[3], idx[0], idx[1]], v));
        Self::new(self.grid, entries).expect("transposed indices stay in range")
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(idx, v)| self.get([idx[2], idx[3], idx[0], idx[1]]) == v)
    }

    pub fn to_dense(&self) -> RealField4 {
        let mut out = RealField4::zeros(self.grid, self.grid);
        let data = out.data_mut();
        let n = self.grid.len();
        for (idx, v) in self.iter() {
            data[self.grid.index(idx[0], idx[1]) * n + self.grid.index(idx[2], idx[3])] = v;
        }
        out
    }

    /// Sparse copy of a dense field on a single pixel grid, skipping exact zeros.
    pub fn from_dense(field: &RealField4) -> Result<Self> {
        if field.grid1() != field.grid2() {
            return Err(Error::GridMismatch("sparse jpd needs identical pixel grids".into()));
        }
        let g = *field.grid1();
        check_grid(&g)?;
        let n = g.len();
        let mut entries = Vec::new();
        for p1 in 0..n {
            let (i1, j1) = g.coords(p1);
            for (p2, &v) in field.row(p1).iter().enumerate() {
                if v != 0.0 {
                    let (i2, j2) = g.coords(p2);
                    entries.push((pack_key([i1, j1, i2, j2]), v));
                }
            }
        }
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0) || n == 0);
        Ok(Self { grid: g, entries })
    }
}

fn check_grid(grid: &GridSpec) -> Result<()> {
    if grid.nx > MAX_AXIS || grid.ny > MAX_AXIS {
        return Err(Error::param("pixel grid", format!("at most {MAX_AXIS} pixels per axis")));
    }
    Ok(())
}
