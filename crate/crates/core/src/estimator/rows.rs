//! Row access to pixel-pair distributions and line-artifact repair.

use std::ops::Range;

use crate::optics::SeparableJpd;
use crate::tensor::{pack_key, GridSpec, RealField4, SparseJpd};
use crate::{Error, Result};

/// A JPD over pairs of sensor pixels that can be read one first-pixel row at a time.
pub trait JpdRows: Sync {
    fn pixel_grid(&self) -> GridSpec;
    /// Adds Γ(p1, ·) into `out`, which is indexed by flat second pixel.
    fn add_row(&self, p1: usize, out: &mut [f64]);

    /// Adds the summed rows of every first pixel in the block xs × ys.
    fn add_block(&self, xs: Range<usize>, ys: Range<usize>, out: &mut [f64]) {
        let g = self.pixel_grid();
        for i in xs {
            for j in ys.clone() {
                self.add_row(g.index(i, j), out);
            }
        }
    }
}

impl JpdRows for SparseJpd {
    fn pixel_grid(&self) -> GridSpec {
        *SparseJpd::pixel_grid(self)
    }

    fn add_row(&self, p1: usize, out: &mut [f64]) {
        for &(k, v) in self.row(p1) {
            out[self.second_pixel(k)] += v;
        }
    }
}

impl JpdRows for RealField4 {
    fn pixel_grid(&self) -> GridSpec {
        *self.grid1()
    }

    fn add_row(&self, p1: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.row(p1)) {
            *o += v;
        }
    }
}

impl JpdRows for SeparableJpd {
    fn pixel_grid(&self) -> GridSpec {
        *SeparableJpd::pixel_grid(self)
    }

    fn add_row(&self, p1: usize, out: &mut [f64]) {
        let g = SeparableJpd::pixel_grid(self);
        let (i1, j1) = g.coords(p1);
        let (xr, yr) = (self.x().row(i1), self.y().row(j1));
        for (i2, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let o = &mut out[i2 * g.ny..(i2 + 1) * g.ny];
            for (o, &yv) in o.iter_mut().zip(yr) {
                *o += xv * yv;
            }
        }
    }

    fn add_block(&self, xs: Range<usize>, ys: Range<usize>, out: &mut [f64]) {
        let g = SeparableJpd::pixel_grid(self);
        let mut sx = vec![0.0; g.nx];
        let mut sy = vec![0.0; g.ny];
        for i in xs {
            sx.iter_mut().zip(self.x().row(i)).for_each(|(a, b)| *a += b);
        }
        for j in ys {
            sy.iter_mut().zip(self.y().row(j)).for_each(|(a, b)| *a += b);
        }
        for (i2, &xv) in sx.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &yv) in out[i2 * g.ny..(i2 + 1) * g.ny].iter_mut().zip(&sy) {
                *o += xv * yv;
            }
        }
    }
}

/// Singles sums of one frame group and its frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglesTerm {
    pub sums: Vec<f64>,
    pub frames: f64,
}

/// Estimated JPD kept as sparse coincidence sums minus low-rank singles terms.
///
/// The full matrix is dense (every pixel pair gets a singles correction), so it is only
/// materialised on request.
#[derive(Debug, Clone, PartialEq)]
pub struct JpdEstimate {
    grid: GridSpec,
    products: SparseJpd,
    terms: Vec<SinglesTerm>,
    frames_used: usize,
}

impl JpdEstimate {
    pub(super) fn new(grid: GridSpec, products: SparseJpd, terms: Vec<SinglesTerm>, frames_used: usize) -> Self {
        Self { grid, products, terms, frames_used }
    }

    /// Reassembles an estimate from persisted parts.
    pub fn from_parts(products: SparseJpd, terms: Vec<SinglesTerm>, frames_used: usize) -> Result<Self> {
        let grid = *products.pixel_grid();
        for t in &terms {
            if t.sums.len() != grid.len() {
                return Err(Error::GridMismatch(format!(
                    "singles term has {} pixels, grid {}",
                    t.sums.len(),
                    grid.len()
                )));
            }
            if !(t.frames > 0.0) {
                return Err(Error::param("singles term", "frame count must be positive"));
            }
        }
        Ok(Self { grid, products, terms, frames_used })
    }

    pub fn with_pixel_pitch(mut self, pitch: f64) -> Result<Self> {
        self.grid = GridSpec::centered(self.grid.nx, self.grid.ny, pitch)?;
        self.products = self.products.with_pixel_pitch(pitch)?;
        Ok(self)
    }

    pub fn frames_used(&self) -> usize {
        self.frames_used
    }

    pub fn products(&self) -> &SparseJpd {
        &self.products
    }

    pub fn terms(&self) -> &[SinglesTerm] {
        &self.terms
    }

    /// Γ(p1, p2); the diagonal is not estimable and reads as zero.
    pub fn value(&self, p1: usize, p2: usize) -> f64 {
        if p1 == p2 {
            return 0.0;
        }
        let (i1, j1) = self.grid.coords(p1);
        let (i2, j2) = self.grid.coords(p2);
        let mut v = self.products.get([i1, j1, i2, j2]);
        for t in &self.terms {
            v -= (t.sums[p1] * t.sums[p2]) / t.frames;
        }
        v
    }

    /// Materialises every nonzero pair.
    pub fn to_sparse(&self) -> Result<SparseJpd> {
        let n = self.grid.len();
        let mut entries = Vec::new();
        let mut row = vec![0.0; n];
        for p1 in 0..n {
            let (i1, j1) = self.grid.coords(p1);
            row.iter_mut().for_each(|v| *v = 0.0);
            for p2 in 0..n {
                row[p2] = self.value(p1, p2);
            }
            for (p2, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let (i2, j2) = self.grid.coords(p2);
                    entries.push((pack_key([i1, j1, i2, j2]), v));
                }
            }
        }
        SparseJpd::from_sorted(self.grid, entries)
    }

    pub fn total(&self) -> f64 {
        let mut t = self.products.total();
        for term in &self.terms {
            let s: f64 = term.sums.iter().sum();
            let s2: f64 = term.sums.iter().map(|v| v * v).sum();
            t -= (s * s - s2) / term.frames;
        }
        t
    }
}

impl JpdRows for JpdEstimate {
    fn pixel_grid(&self) -> GridSpec {
        self.grid
    }

    fn add_row(&self, p1: usize, out: &mut [f64]) {
        for t in &self.terms {
            let c = t.sums[p1];
            if c == 0.0 {
                continue;
            }
            for (o, &s) in out.iter_mut().zip(&t.sums) {
                *o -= (c * s) / t.frames;
            }
            out[p1] += (c * c) / t.frames;
        }
        JpdRows::add_row(&self.products, p1, out);
    }

    fn add_block(&self, xs: Range<usize>, ys: Range<usize>, out: &mut [f64]) {
        let g = self.grid;
        for t in &self.terms {
            let mut c = 0.0;
            for i in xs.clone() {
                for j in ys.clone() {
                    let p = g.index(i, j);
                    c += t.sums[p];
                    out[p] += (t.sums[p] * t.sums[p]) / t.frames;
                }
            }
            if c != 0.0 {
                for (o, &s) in out.iter_mut().zip(&t.sums) {
                    *o -= (c * s) / t.frames;
                }
            }
        }
        for i in xs {
            for j in ys.clone() {
                JpdRows::add_row(&self.products, g.index(i, j), out);
            }
        }
    }
}

/// Replaces Γ(x₁,y₁,x₂,y₁) for |x₁−x₂| ≤ range by the mean of its in-bounds neighbours at y₂ = y₁ ± 1.
///
/// `row` is the full row of first pixel `p1`; entries off the affected segment are untouched.
pub fn repair_row(grid: &GridSpec, p1: usize, row: &mut [f64], range: usize) {
    let (x1, y1) = grid.coords(p1);
    let lo = x1.saturating_sub(range);
    let hi = (x1 + range).min(grid.nx - 1);
    for x2 in lo..=hi {
        let mut sum = 0.0;
        let mut n = 0;
        if y1 > 0 {
            sum += row[grid.index(x2, y1 - 1)];
            n += 1;
        }
        if y1 + 1 < grid.ny {
            sum += row[grid.index(x2, y1 + 1)];
            n += 1;
        }
        row[grid.index(x2, y1)] = if n == 0 { 0.0 } else { sum / n as f64 };
    }
}

/// Row view of another JPD with the line artifact repaired.
pub struct LineRepaired<'a, J: JpdRows + ?Sized> {
    pub inner: &'a J,
    pub range: usize,
}

impl<J: JpdRows + ?Sized> JpdRows for LineRepaired<'_, J> {
    fn pixel_grid(&self) -> GridSpec {
        self.inner.pixel_grid()
    }

    fn add_row(&self, p1: usize, out: &mut [f64]) {
        let g = self.inner.pixel_grid();
        let mut row = vec![0.0; g.len()];
        self.inner.add_row(p1, &mut row);
        repair_row(&g, p1, &mut row, self.range);
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Sparse line-artifact repair; see [`repair_row`].
pub fn repair_line_artifact(jpd: &SparseJpd, range: usize) -> Result<SparseJpd> {
    let g = *jpd.pixel_grid();
    let mut out = Vec::with_capacity(jpd.len());
    let entries = jpd.entries();
    let mut start = 0;
    while start < entries.len() {
        let head = entries[start].0 >> 32;
        let end = start + entries[start..].partition_point(|e| e.0 >> 32 == head);
        let row = &entries[start..end];
        let (x1, y1) = ((head >> 16) as usize, (head & 0xffff) as usize);
        let lookup = |x2: usize, y2: usize| {
            let k = pack_key([x1, y1, x2, y2]);
            row.binary_search_by_key(&k, |e| e.0).map_or(0.0, |n| row[n].1)
        };
        let lo = x1.saturating_sub(range);
        let hi = (x1 + range).min(g.nx - 1);
        let mut new_row: Vec<(u64, f64)> = row
            .iter()
            .copied()
            .filter(|&(k, _)| {
                let x2 = ((k >> 16) & 0xffff) as usize;
                let y2 = (k & 0xffff) as usize;
                !(y2 == y1 && x2 >= lo && x2 <= hi)
            })
            .collect();
        for x2 in lo..=hi {
            let mut sum = 0.0;
            let mut n = 0;
            if y1 > 0 {
                sum += lookup(x2, y1 - 1);
                n += 1;
            }
            if y1 + 1 < g.ny {
                sum += lookup(x2, y1 + 1);
                n += 1;
            }
            let v = if n == 0 { 0.0 } else { sum / n as f64 };
            if v != 0.0 {
                new_row.push((pack_key([x1, y1, x2, y1]), v));
            }
        }
        new_row.sort_unstable_by_key(|e| e.0);
        out.extend(new_row);
        start = end;
    }
    SparseJpd::from_sorted(g, out)
}
