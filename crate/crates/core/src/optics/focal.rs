//! Per-aperture Fourier treatment of the microlens array.
//!
//! Each lens sees the field samples inside its aperture. A zero-padded DFT of that patch gives the
//! plane-wave content; bin q lands at f·tan(asin(q/k)) from the lens center and is deposited
//! bilinearly onto the pixel grid. The DFT is normalised so that every lens is lossless.

use std::ops::{AddAssign, Mul, Range};

use num_complex::Complex64;

use super::{MicrolensArray, SensorModel};
use crate::tensor::{ComplexField4, GridSpec, RealField4};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalPlaneOptions {
    /// DFT bins per aperture sample along each axis.
    pub oversample: usize,
}

impl Default for FocalPlaneOptions {
    fn default() -> Self {
        Self { oversample: 8 }
    }
}

struct LensTile {
    samples: Range<usize>,
    bins: usize,
    transfer: Vec<Complex64>,
    pixels: Range<usize>,
    /// Per bin: up to two (pixel offset within `pixels`, weight) pairs of the linear split.
    deposit: Vec<[(usize, f64); 2]>,
}

/// One transverse axis: the lenses along it and the pixels behind them.
struct LensAxis {
    tiles: Vec<LensTile>,
}

impl LensAxis {
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_samples: usize,
        sample_pitch: f64,
        sample_origin: f64,
        lens_centers: &[f64],
        mla: &MicrolensArray,
        n_pixels: usize,
        pixel_pitch: f64,
        pixel_origin: f64,
        oversample: usize,
    ) -> Self {
        let half = mla.aperture_width / 2.0 * (1.0 + 1e-12);
        let k = mla.k();
        let tiles = lens_centers
            .iter()
            .map(|&c| {
                let lo = ((c - half - sample_origin) / sample_pitch).ceil().max(0.0) as usize;
                let hi =
                    (((c + half - sample_origin) / sample_pitch).floor() + 1.0).clamp(0.0, n_samples as f64) as usize;
                let samples = lo..hi.max(lo);
                let m = samples.len();
                let bins = m * oversample;
                let mut transfer = Vec::with_capacity(bins * m);
                let mut deposit_pairs = Vec::with_capacity(bins);
                let norm = 1.0 / (bins as f64).sqrt();
                let dq = 2.0 * std::f64::consts::PI / (bins as f64 * sample_pitch);
                for b in 0..bins {
                    let q = (b as f64 - (bins as f64 - 1.0) / 2.0) * dq;
                    for s in samples.clone() {
                        let x = sample_origin + s as f64 * sample_pitch - c;
                        transfer.push(Complex64::from_polar(norm, -q * x));
                    }
                    let t = if q.abs() < k {
                        (c + mla.displacement_for_wavevector(q) - pixel_origin) / pixel_pitch
                    } else {
                        f64::NAN
                    };
                    deposit_pairs.push(t);
                }
                let mut plo = usize::MAX;
                let mut phi = 0;
                for &t in &deposit_pairs {
                    if !t.is_finite() {
                        continue;
                    }
                    let i0 = t.floor();
                    for (i, _) in [(i0, 0), (i0 + 1.0, 1)] {
                        if i >= 0.0 && i < n_pixels as f64 {
                            plo = plo.min(i as usize);
                            phi = phi.max(i as usize + 1);
                        }
                    }
                }
                let pixels = if plo == usize::MAX { 0..0 } else { plo..phi };
                let mut deposit = vec![[(0, 0.0); 2]; bins];
                for (b, &t) in deposit_pairs.iter().enumerate() {
                    if !t.is_finite() {
                        continue;
                    }
                    let i0 = t.floor();
                    let frac = t - i0;
                    for (slot, (i, w)) in [(i0, 1.0 - frac), (i0 + 1.0, frac)].into_iter().enumerate() {
                        if i >= 0.0 && i < n_pixels as f64 && w != 0.0 {
                            deposit[b][slot] = (i as usize - pixels.start, w);
                        }
                    }
                }
                LensTile { samples, bins, transfer, pixels, deposit }
            })
            .collect();
        Self { tiles }
    }
}

/// out[.., r, ..] = Σ_c mat[r, c] · data[.., c, ..] along `axis`.
fn apply_axis<T>(data: &[T], shape: &[usize], axis: usize, mat: &[T], rows: usize) -> Vec<T>
where
    T: Copy + Default + AddAssign + Mul<Output = T>,
{
    let cols = shape[axis];
    debug_assert_eq!(mat.len(), rows * cols);
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::default(); outer * rows * inner];
    for o in 0..outer {
        let src = &data[o * cols * inner..(o + 1) * cols * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for r in 0..rows {
            let drow = &mut dst[r * inner..(r + 1) * inner];
            for c in 0..cols {
                let m = mat[r * cols + c];
                let srow = &src[c * inner..(c + 1) * inner];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += m * *s;
                }
            }
        }
    }
    out
}

/// Sparse form of [`apply_axis`] for the deposit step, where each bin feeds at most two pixels.
fn deposit_axis(data: &[f64], shape: &[usize], axis: usize, deposit: &[[(usize, f64); 2]], rows: usize) -> Vec<f64> {
    let cols = shape[axis];
    debug_assert_eq!(deposit.len(), cols);
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        let src = &data[o * cols * inner..(o + 1) * cols * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for (c, pair) in deposit.iter().enumerate() {
            let srow = &src[c * inner..(c + 1) * inner];
            for &(r, w) in pair {
                if w == 0.0 {
                    continue;
                }
                for (d, s) in dst[r * inner..(r + 1) * inner].iter_mut().zip(srow) {
                    *d += w * *s;
                }
            }
        }
    }
    out
}

/// Projects a field block through one tile per axis and adds the focal-plane intensity into `out`.
fn project_block(block: Vec<Complex64>, tiles: &[&LensTile], out: &mut [f64], out_dims: &[usize]) {
    let mut shape: Vec<usize> = tiles.iter().map(|t| t.samples.len()).collect();
    let mut amp = block;
    for (axis, t) in tiles.iter().enumerate() {
        amp = apply_axis(&amp, &shape, axis, &t.transfer, t.bins);
        shape[axis] = t.bins;
    }
    let mut inten: Vec<f64> = amp.iter().map(|v| v.norm_sqr()).collect();
    for (axis, t) in tiles.iter().enumerate() {
        inten = deposit_axis(&inten, &shape, axis, &t.deposit, t.pixels.len());
        shape[axis] = t.pixels.len();
    }
    let offs: Vec<usize> = tiles.iter().map(|t| t.pixels.start).collect();
    add_box(&inten, &shape, out, out_dims, &offs);
}

fn add_box(src: &[f64], shape: &[usize], dst: &mut [f64], dims: &[usize], offs: &[usize]) {
    let nd = shape.len();
    let last = shape[nd - 1];
    if src.is_empty() || last == 0 {
        return;
    }
    let lines = src.len() / last;
    let mut idx = vec![0usize; nd - 1];
    for line in 0..lines {
        let mut flat = 0;
        for a in 0..nd - 1 {
            flat = flat * dims[a] + idx[a] + offs[a];
        }
        flat = flat * dims[nd - 1] + offs[nd - 1];
        for (d, s) in dst[flat..flat + last].iter_mut().zip(&src[line * last..(line + 1) * last]) {
            *d += *s;
        }
        for a in (0..nd - 1).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn check_sampling(grid: &GridSpec, mla: &MicrolensArray) -> Result<()> {
    if grid.pitch > mla.aperture_width / 4.0 * (1.0 + 1e-12) {
        return Err(Error::SamplingTooCoarse(format!(
            "field pitch {:.3e} m exceeds aperture_width/4 = {:.3e} m",
            grid.pitch,
            mla.aperture_width / 4.0
        )));
    }
    Ok(())
}

fn lens_centers(n: usize, pitch: f64) -> Vec<f64> {
    let o = -((n - 1) as f64 * pitch) / 2.0;
    (0..n).map(|a| o + a as f64 * pitch).collect()
}

fn axis_x(
    g: &GridSpec,
    mla: &MicrolensArray,
    n_lenses: usize,
    n_pixels: usize,
    px: f64,
    opts: &FocalPlaneOptions,
) -> LensAxis {
    LensAxis::new(
        g.nx,
        g.pitch,
        g.origin_x,
        &lens_centers(n_lenses, mla.pitch),
        mla,
        n_pixels,
        px,
        -((n_pixels - 1) as f64 * px) / 2.0,
        opts.oversample,
    )
}

fn axis_y(
    g: &GridSpec,
    mla: &MicrolensArray,
    n_lenses: usize,
    n_pixels: usize,
    px: f64,
    opts: &FocalPlaneOptions,
) -> LensAxis {
    LensAxis::new(
        g.ny,
        g.pitch,
        g.origin_y,
        &lens_centers(n_lenses, mla.pitch),
        mla,
        n_pixels,
        px,
        -((n_pixels - 1) as f64 * px) / 2.0,
        opts.oversample,
    )
}

fn line_jpd(
    field: &ComplexField4,
    mla: &MicrolensArray,
    n_lenses: usize,
    n_pixels: usize,
    px: f64,
    opts: &FocalPlaneOptions,
) -> Result<RealField4> {
    let (g1, g2) = (field.grid1(), field.grid2());
    let a1 = axis_x(g1, mla, n_lenses, n_pixels, px, opts);
    let a2 = axis_x(g2, mla, n_lenses, n_pixels, px, opts);
    let dims = [n_pixels, n_pixels];
    let mut out = vec![0.0; n_pixels * n_pixels];
    for t1 in &a1.tiles {
        for t2 in &a2.tiles {
            if t1.samples.is_empty() || t2.samples.is_empty() {
                continue;
            }
            let mut block = Vec::with_capacity(t1.samples.len() * t2.samples.len());
            for s1 in t1.samples.clone() {
                for s2 in t2.samples.clone() {
                    block.push(field.at(s1, s2));
                }
            }
            if block.iter().all(|v| v.norm_sqr() == 0.0) {
                continue;
            }
            project_block(block, &[t1, t2], &mut out, &dims);
        }
    }
    let line = GridSpec::line(n_pixels, px)?;
    let f = RealField4::new(line, line, out)?.with_nonnegative()?;
    Ok(if field.is_symmetric() { symmetrize(f) } else { f })
}

/// Exchange-symmetric inputs give symmetric outputs up to summation order; make it exact.
fn symmetrize(mut f: RealField4) -> RealField4 {
    if f.grid1() != f.grid2() {
        return f;
    }
    let n = f.grid1().len();
    let data = f.data_mut();
    for p1 in 0..n {
        for p2 in (p1 + 1)..n {
            let v = 0.5 * (data[p1 * n + p2] + data[p2 * n + p1]);
            data[p1 * n + p2] = v;
            data[p2 * n + p1] = v;
        }
    }
    f.set_flags_unchecked(true, true);
    f
}

/// Noiseless focal-plane JPD Γ_SH on the sensor's pixel grid.
///
/// Line fields (both grids with ny == 1) are treated as one axis of a separable state and map onto
/// a `width x 1` pixel line; otherwise the full 4D field is projected.
pub fn focal_plane_jpd(
    field: &ComplexField4,
    mla: &MicrolensArray,
    sensor: &SensorModel,
    opts: &FocalPlaneOptions,
) -> Result<RealField4> {
    mla.validate()?;
    sensor.validate()?;
    if opts.oversample == 0 {
        return Err(Error::param("oversample", "must be >= 1"));
    }
    let (g1, g2) = (field.grid1(), field.grid2());
    check_sampling(g1, mla)?;
    check_sampling(g2, mla)?;
    if g1.ny == 1 && g2.ny == 1 {
        return line_jpd(field, mla, mla.n_lenses_x, sensor.width, sensor.pixel_pitch, opts);
    }
    let px = sensor.pixel_pitch;
    let axes = [
        axis_x(g1, mla, mla.n_lenses_x, sensor.width, px, opts),
        axis_y(g1, mla, mla.n_lenses_y, sensor.height, px, opts),
        axis_x(g2, mla, mla.n_lenses_x, sensor.width, px, opts),
        axis_y(g2, mla, mla.n_lenses_y, sensor.height, px, opts),
    ];
    let dims = [sensor.width, sensor.height, sensor.width, sensor.height];
    let mut out = vec![0.0; dims.iter().product()];
    let fd = field.dims();
    for t0 in &axes[0].tiles {
        for t1 in &axes[1].tiles {
            for t2 in &axes[2].tiles {
                for t3 in &axes[3].tiles {
                    let tiles = [t0, t1, t2, t3];
                    if tiles.iter().any(|t| t.samples.is_empty()) {
                        continue;
                    }
                    let mut block = Vec::with_capacity(tiles.iter().map(|t| t.samples.len()).product());
                    for a in t0.samples.clone() {
                        for b in t1.samples.clone() {
                            for c in t2.samples.clone() {
                                let base = ((a * fd[1] + b) * fd[2] + c) * fd[3];
                                block.extend_from_slice(&field.data()[base + t3.samples.start..base + t3.samples.end]);
                            }
                        }
                    }
                    if block.iter().all(|v| v.norm_sqr() == 0.0) {
                        continue;
                    }
                    project_block(block, &tiles, &mut out, &dims);
                }
            }
        }
    }
    let pg = sensor.pixel_grid()?;
    let f = RealField4::new(pg, pg, out)?.with_nonnegative()?;
    Ok(if field.is_symmetric() { symmetrize(f) } else { f })
}

/// Focal-plane JPD of a state that factors as X(x₁,x₂)·Y(y₁,y₂).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableJpd {
    grid: GridSpec,
    x: RealField4,
    y: RealField4,
}

impl SeparableJpd {
    pub fn new(x: RealField4, y: RealField4, pixel_pitch: f64) -> Result<Self> {
        for f in [&x, &y] {
            if f.grid1().ny != 1 || f.grid1() != f.grid2() {
                return Err(Error::GridMismatch("separable factors need equal line grids".into()));
            }
            if f.data().iter().any(|&v| v < 0.0) {
                return Err(Error::param("separable jpd", "factors must be nonnegative"));
            }
        }
        let grid = GridSpec::centered(x.grid1().nx, y.grid1().nx, pixel_pitch)?;
        Ok(Self { grid, x, y })
    }

    pub fn pixel_grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn x(&self) -> &RealField4 {
        &self.x
    }

    pub fn y(&self) -> &RealField4 {
        &self.y
    }

    #[inline]
    pub fn value(&self, p1: usize, p2: usize) -> f64 {
        let (i1, j1) = self.grid.coords(p1);
        let (i2, j2) = self.grid.coords(p2);
        self.x.at(i1, i2) * self.y.at(j1, j2)
    }

    pub fn total(&self) -> f64 {
        self.x.sum() * self.y.sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.x.is_symmetric() && self.y.is_symmetric()
    }

    pub fn to_dense(&self) -> Result<RealField4> {
        RealField4::from_fn(self.grid, self.grid, |p1, p2| self.value(p1, p2))?.with_nonnegative()
    }
}

/// Separable focal-plane JPD from the x- and y-factor line fields.
pub fn focal_plane_jpd_separable(
    x_field: &ComplexField4,
    y_field: &ComplexField4,
    mla: &MicrolensArray,
    sensor: &SensorModel,
    opts: &FocalPlaneOptions,
) -> Result<SeparableJpd> {
    mla.validate()?;
    sensor.validate()?;
    for f in [x_field, y_field] {
        if f.grid1().ny != 1 || f.grid2().ny != 1 {
            return Err(Error::GridMismatch("separable factors must be line fields".into()));
        }
        check_sampling(f.grid1(), mla)?;
        check_sampling(f.grid2(), mla)?;
    }
    let x = line_jpd(x_field, mla, mla.n_lenses_x, sensor.width, sensor.pixel_pitch, opts)?;
    let y = line_jpd(y_field, mla, mla.n_lenses_y, sensor.height, sensor.pixel_pitch, opts)?;
    SeparableJpd::new(x, y, sensor.pixel_pitch)
}
