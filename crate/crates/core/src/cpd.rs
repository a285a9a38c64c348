//! Aperture-pair conditional distributions, spot centroids and phase-gradient fields.
//!
//! Photon-1 pixels of one aperture are grouped into small segments. Each segment's CPD is split
//! into lens tiles and every tile keeps only a 5×5 window around its brightest pixel, minus the
//! local background read from the surrounding ring. The cleaned tiles are summed into the aperture
//! CPD, whose spot in each lens gives the photon-2 wave vector there.

use std::ops::Range;

use rayon::prelude::*;

use crate::estimator::JpdRows;
use crate::optics::MicrolensArray;
use crate::tensor::{Field2, GridSpec, RealField4};
use crate::{Error, Result};

/// Assignment of sensor pixels to lens apertures.
///
/// Lens (a, b) owns the pixels whose centers fall in the half-open cell
/// [c − pitch/2, c + pitch/2) around its center on each axis; other pixels are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureMap {
    mla: MicrolensArray,
    pixels: GridSpec,
    lenses: GridSpec,
    x_ranges: Vec<Range<usize>>,
    y_ranges: Vec<Range<usize>>,
}

fn axis_ranges(n_lenses: usize, lens0: f64, pitch: f64, n_pix: usize, pix0: f64, pix_pitch: f64) -> Vec<Range<usize>> {
    let edge = lens0 - pitch / 2.0;
    let mut ranges = vec![0..0; n_lenses];
    for i in 0..n_pix {
        let a = ((pix0 + i as f64 * pix_pitch - edge) / pitch).floor();
        if a >= 0.0 && (a as usize) < n_lenses {
            let r = &mut ranges[a as usize];
            if r.start == r.end {
                *r = i..i + 1;
            } else {
                r.end = i + 1;
            }
        }
    }
    ranges
}

impl ApertureMap {
    pub fn new(mla: MicrolensArray, pixels: GridSpec) -> Result<Self> {
        mla.validate()?;
        let lenses = mla.lens_grid()?;
        let x_ranges = axis_ranges(lenses.nx, lenses.origin_x, mla.pitch, pixels.nx, pixels.origin_x, pixels.pitch);
        let y_ranges = axis_ranges(lenses.ny, lenses.origin_y, mla.pitch, pixels.ny, pixels.origin_y, pixels.pitch);
        if x_ranges.iter().chain(&y_ranges).any(|r| r.is_empty()) {
            return Err(Error::GridMismatch("some lens apertures hold no sensor pixels".into()));
        }
        Ok(Self { mla, pixels, lenses, x_ranges, y_ranges })
    }

    pub fn mla(&self) -> &MicrolensArray {
        &self.mla
    }

    pub fn pixel_grid(&self) -> &GridSpec {
        &self.pixels
    }

    /// Lens centers on the aperture grid.
    pub fn lens_grid(&self) -> &GridSpec {
        &self.lenses
    }

    pub fn pixel_ranges(&self, lens: (usize, usize)) -> (Range<usize>, Range<usize>) {
        (self.x_ranges[lens.0].clone(), self.y_ranges[lens.1].clone())
    }

    pub fn lens_of(&self, p: usize) -> Option<(usize, usize)> {
        let (i, j) = self.pixels.coords(p);
        let a = self.x_ranges.iter().position(|r| r.contains(&i))?;
        let b = self.y_ranges.iter().position(|r| r.contains(&j))?;
        Some((a, b))
    }

    fn check_lens(&self, lens: (usize, usize)) -> Result<()> {
        if lens.0 >= self.lenses.nx || lens.1 >= self.lenses.ny {
            return Err(Error::IndexOutOfRange(format!(
                "aperture {lens:?} outside {}x{} lenses",
                self.lenses.nx, self.lenses.ny
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdConfig {
    pub segment_size: usize,
    /// Take k₁(A,B) from k₂(B,A) instead of conditioning on photon 2.
    pub exchange_symmetric: bool,
    /// Pairs whose window mass is below this fraction of the largest are marked invalid.
    pub min_relative_weight: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self { segment_size: 4, exchange_symmetric: true, min_relative_weight: 1e-6 }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3..=7).contains(&self.segment_size) {
            return Err(Error::param("cpd.segment_size", "must lie in 3..=7"));
        }
        if !(0.0..1.0).contains(&self.min_relative_weight) {
            return Err(Error::param("cpd.min_relative_weight", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Sums of single-pixel CPDs over the segments of one aperture, as full-sensor fields.
///
/// Segments tile the aperture from its low corner; the last ones along each axis may be smaller.
pub fn segment_sum<J: JpdRows + ?Sized>(
    jpd: &J,
    map: &ApertureMap,
    given: (usize, usize),
    segment_size: usize,
) -> Result<Vec<Field2<f64>>> {
    map.check_lens(given)?;
    check_grid(jpd, map)?;
    if segment_size == 0 {
        return Err(Error::param("segment_size", "must be >= 1"));
    }
    let g = map.pixels;
    let (xr, yr) = map.pixel_ranges(given);
    let mut out = Vec::new();
    for x0 in xr.clone().step_by(segment_size) {
        for y0 in yr.clone().step_by(segment_size) {
            let mut f = Field2::zeros(g);
            jpd.add_block(x0..(x0 + segment_size).min(xr.end), y0..(y0 + segment_size).min(yr.end), f.data_mut());
            out.push(f);
        }
    }
    Ok(out)
}

fn check_grid<J: JpdRows + ?Sized>(jpd: &J, map: &ApertureMap) -> Result<()> {
    let g = jpd.pixel_grid();
    if (g.nx, g.ny) != (map.pixels.nx, map.pixels.ny) {
        return Err(Error::GridMismatch(format!(
            "jpd on {}x{} pixels, aperture map on {}x{}",
            g.nx, g.ny, map.pixels.nx, map.pixels.ny
        )));
    }
    Ok(())
}

/// Index of the largest value, smallest index on ties; also reports whether a tie occurred.
fn argmax(data: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (n, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = n;
            tie = false;
        } else if v == data[best] {
            tie = true;
        }
    }
    (best, tie)
}

/// Denoises an nx×ny block (x-major) in place; returns whether the maximum was tied.
fn denoise_block(data: &mut [f64], nx: usize, ny: usize) -> bool {
    for v in data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    if data.iter().all(|&v| v == 0.0) {
        return false;
    }
    let (m, tie) = argmax(data);
    let (ci, cj) = ((m / ny) as isize, (m % ny) as isize);
    let inside = |i: isize, j: isize, r: isize| (i - ci).abs() <= r && (j - cj).abs() <= r;
    let (mut ring, mut count) = (0.0, 0usize);
    for i in (ci - 3).max(0)..(ci + 4).min(nx as isize) {
        for j in (cj - 3).max(0)..(cj + 4).min(ny as isize) {
            if !inside(i, j, 2) {
                ring += data[i as usize * ny + j as usize];
                count += 1;
            }
        }
    }
    let bg = if count > 0 { ring / count as f64 } else { 0.0 };
    for i in 0..nx as isize {
        for j in 0..ny as isize {
            let v = &mut data[i as usize * ny + j as usize];
            *v = if inside(i, j, 2) { *v - bg } else { 0.0 };
        }
    }
    tie
}

/// Zero negatives, keep the 5×5 window around the maximum minus the mean of the surrounding
/// 7×7 ring (in-bounds pixels only), and zero everything else.
pub fn denoise_segment(field: &Field2<f64>) -> Field2<f64> {
    let g = *field.grid();
    let mut data = field.data().to_vec();
    denoise_block(&mut data, g.nx, g.ny);
    Field2::new(g, data).expect("same grid")
}

/// Nonnegative CPD of photon 2 given photon 1 in one aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureCpd {
    pub given: (usize, usize),
    pub distribution: Field2<f64>,
    /// Lens tiles whose maximum was tied and resolved toward the smaller index.
    pub tie_breaks: usize,
}

/// Segment sums, per-lens denoising of each, summation and clamping of negatives.
pub fn aperture_cpd<J: JpdRows + ?Sized>(
    jpd: &J,
    map: &ApertureMap,
    given: (usize, usize),
    segment_size: usize,
) -> Result<ApertureCpd> {
    let segments = segment_sum(jpd, map, given, segment_size)?;
    let g = map.pixels;
    let mut acc = Field2::zeros(g);
    let mut ties = 0;
    let mut tile = Vec::new();
    for seg in &segments {
        for xr in &map.x_ranges {
            for yr in &map.y_ranges {
                let (tx, ty) = (xr.len(), yr.len());
                tile.clear();
                for i in xr.clone() {
                    tile.extend_from_slice(&seg.data()[g.index(i, yr.start)..g.index(i, yr.start) + ty]);
                }
                ties += denoise_block(&mut tile, tx, ty) as usize;
                let out = acc.data_mut();
                for (a, i) in xr.clone().enumerate() {
                    let base = g.index(i, yr.start);
                    for b in 0..ty {
                        out[base + b] += tile[a * ty + b];
                    }
                }
            }
        }
    }
    for v in acc.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(ApertureCpd { given, distribution: acc, tie_breaks: ties })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    /// Transverse wave vector (rad/m).
    pub k: [f64; 2],
    /// CPD mass inside the centroid window.
    pub weight: f64,
    /// Spot position relative to the lens center (m).
    pub offset: [f64; 2],
    /// The 7×7 window was cut by the aperture edge.
    pub clipped: bool,
}

/// Spot centroid of a CPD inside one target aperture; `None` when the window holds no mass or
/// the spot lies beyond the measurable range.
pub fn centroid_and_gradient(cpd: &ApertureCpd, map: &ApertureMap, target: (usize, usize)) -> Result<Option<Centroid>> {
    map.check_lens(target)?;
    let g = map.pixels;
    let (xr, yr) = map.pixel_ranges(target);
    if xr.len() < 3 || yr.len() < 3 {
        return Ok(None);
    }
    let d = cpd.distribution.data();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for u in xr.start..=xr.end - 3 {
        for v in yr.start..=yr.end - 3 {
            let mut s = 0.0;
            for i in u..u + 3 {
                for j in v..v + 3 {
                    s += d[g.index(i, j)];
                }
            }
            if s > best.0 {
                best = (s, u + 1, v + 1);
            }
        }
    }
    let (_, ci, cj) = best;
    let ix = ci.saturating_sub(3).max(xr.start)..(ci + 4).min(xr.end);
    let jy = cj.saturating_sub(3).max(yr.start)..(cj + 4).min(yr.end);
    let clipped = ix.len() < 7 || jy.len() < 7;
    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for i in ix {
        for j in jy.clone() {
            let w = d[g.index(i, j)];
            m += w;
            mx += w * g.x(i);
            my += w * g.y(j);
        }
    }
    if !(m > 0.0) {
        return Ok(None);
    }
    let lens = map.lenses;
    let offset = [mx / m - lens.x(target.0), my / m - lens.y(target.1)];
    let k = [map.mla.wavevector_for_displacement(offset[0]), map.mla.wavevector_for_displacement(offset[1])];
    if k[0].hypot(k[1]) > map.mla.max_wavevector() * (1.0 + 1e-12) {
        return Ok(None);
    }
    Ok(Some(Centroid { k, weight: m, offset, clipped }))
}

/// Phase gradients of both photons and aperture-pair weights over the lens grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub k1x: RealField4,
    pub k1y: RealField4,
    pub k2x: RealField4,
    pub k2y: RealField4,
    pub weight: RealField4,
    pub valid: Vec<bool>,
}

impl GradientField {
    /// Aperture (or interpolated) grid.
    pub fn grid(&self) -> &GridSpec {
        self.weight.grid1()
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    /// Centered sub-window of nx×ny apertures for both photons.
    pub fn crop_centered(&self, nx: usize, ny: usize) -> Result<Self> {
        let (g1, g2) = (*self.weight.grid1(), *self.weight.grid2());
        for g in [&g1, &g2] {
            if nx == 0
                || ny == 0
                || nx > g.nx
                || ny > g.ny
                || !(g.nx - nx).is_multiple_of(2)
                || !(g.ny - ny).is_multiple_of(2)
            {
                return Err(Error::param(
                    "crop",
                    format!("{nx}x{ny} window cannot sit centered in a {}x{} grid", g.nx, g.ny),
                ));
            }
        }
        let sub = |g: &GridSpec| GridSpec::centered(nx, ny, g.pitch);
        let (s1, s2) = (sub(&g1)?, sub(&g2)?);
        let (o1, o2) = (((g1.nx - nx) / 2, (g1.ny - ny) / 2), ((g2.nx - nx) / 2, (g2.ny - ny) / 2));
        let pick = |src: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(s1.len() * s2.len());
            for p1 in 0..s1.len() {
                let (i1, j1) = s1.coords(p1);
                let q1 = g1.index(i1 + o1.0, j1 + o1.1);
                for p2 in 0..s2.len() {
                    let (i2, j2) = s2.coords(p2);
                    out.push(src[q1 * g2.len() + g2.index(i2 + o2.0, j2 + o2.1)]);
                }
            }
            out
        };
        let valid_f: Vec<f64> = self.valid.iter().map(|&v| v as u8 as f64).collect();
        let valid = pick(&valid_f).into_iter().map(|v| v != 0.0).collect();
        let f = |src: &RealField4| RealField4::new(s1, s2, pick(src.data()));
        GradientField::new([f(&self.k1x)?, f(&self.k1y)?], [f(&self.k2x)?, f(&self.k2y)?], f(&self.weight)?, valid)
    }

    /// Builds a field, zeroing weights of invalid points.
    pub fn new(k1: [RealField4; 2], k2: [RealField4; 2], mut weight: RealField4, valid: Vec<bool>) -> Result<Self> {
        let g = (*weight.grid1(), *weight.grid2());
        for f in k1.iter().chain(&k2) {
            if (*f.grid1(), *f.grid2()) != g {
                return Err(Error::GridMismatch("gradient components and weights differ in grid".into()));
            }
        }
        if valid.len() != weight.data().len() {
            return Err(Error::GridMismatch("validity mask length differs from weights".into()));
        }
        if weight.data().iter().any(|&w| w < 0.0) {
            return Err(Error::param("weight", "must be nonnegative"));
        }
        for (w, &ok) in weight.data_mut().iter_mut().zip(&valid) {
            if !ok {
                *w = 0.0;
            }
        }
        let [k1x, k1y] = k1;
        let [k2x, k2y] = k2;
        Ok(Self { k1x, k1y, k2x, k2y, weight: weight.with_nonnegative()?, valid })
    }
}

/// Counters worth recording alongside a gradient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CpdReport {
    pub segment_size: usize,
    pub tie_breaks: usize,
    pub clipped_windows: usize,
    pub invalid_pairs: usize,
}

struct Conditioned {
    k: [Vec<f64>; 2],
    mass: Vec<f64>,
    valid: Vec<bool>,
    ties: usize,
    clipped: usize,
}

/// Centroids of one aperture CPD against every target aperture.
fn centroid_row(cpd: &ApertureCpd, map: &ApertureMap) -> Result<Vec<Option<Centroid>>> {
    let lenses = map.lenses;
    (0..lenses.len()).map(|b| centroid_and_gradient(cpd, map, lenses.coords(b))).collect()
}

fn collect_rows(n: usize, rows: Vec<Result<(Vec<Option<Centroid>>, usize)>>) -> Result<Conditioned> {
    let mut out = Conditioned {
        k: [vec![0.0; n * n], vec![0.0; n * n]],
        mass: vec![0.0; n * n],
        valid: vec![false; n * n],
        ties: 0,
        clipped: 0,
    };
    for (a, r) in rows.into_iter().enumerate() {
        let (row, ties) = r?;
        out.ties += ties;
        for (b, c) in row.into_iter().enumerate() {
            if let Some(c) = c {
                let idx = a * n + b;
                out.k[0][idx] = c.k[0];
                out.k[1][idx] = c.k[1];
                out.mass[idx] = c.weight;
                out.valid[idx] = true;
                out.clipped += c.clipped as usize;
            }
        }
    }
    Ok(out)
}

/// Photon-2 centroids for every (given, target) aperture pair, indexed given·n + target.
fn condition_all<J: JpdRows + ?Sized>(jpd: &J, map: &ApertureMap, seg: usize) -> Result<Conditioned> {
    let lenses = map.lenses;
    let rows = (0..lenses.len())
        .into_par_iter()
        .map(|a| {
            let cpd = aperture_cpd(jpd, map, lenses.coords(a), seg)?;
            Ok((centroid_row(&cpd, map)?, cpd.tie_breaks))
        })
        .collect();
    collect_rows(lenses.len(), rows)
}

/// Every aperture CPD as one tensor: photon-1 axis = lens grid, photon-2 axis = pixel grid.
/// Also returns the total number of tie-break events.
pub fn aperture_cpds<J: JpdRows + ?Sized>(
    jpd: &J,
    map: &ApertureMap,
    segment_size: usize,
) -> Result<(RealField4, usize)> {
    let lenses = map.lenses;
    let per: Vec<Result<ApertureCpd>> =
        (0..lenses.len()).into_par_iter().map(|a| aperture_cpd(jpd, map, lenses.coords(a), segment_size)).collect();
    let mut data = Vec::with_capacity(lenses.len() * map.pixels.len());
    let mut ties = 0;
    for c in per {
        let c = c?;
        ties += c.tie_breaks;
        data.extend_from_slice(c.distribution.data());
    }
    Ok((RealField4::new(lenses, map.pixels, data)?, ties))
}

fn condition_stored(cpds: &RealField4, map: &ApertureMap) -> Result<Conditioned> {
    let lenses = map.lenses;
    if *cpds.grid1() != lenses || *cpds.grid2() != map.pixels {
        return Err(Error::GridMismatch("stored CPDs do not match the aperture map".into()));
    }
    let rows = (0..lenses.len())
        .into_par_iter()
        .map(|a| {
            let cpd = ApertureCpd {
                given: lenses.coords(a),
                distribution: Field2::new(map.pixels, cpds.row(a).to_vec())?,
                tie_breaks: 0,
            };
            Ok((centroid_row(&cpd, map)?, 0))
        })
        .collect();
    collect_rows(lenses.len(), rows)
}

/// Gradient fields from CPDs stored by [`aperture_cpds`]. `given2` holds the CPDs of photon 1
/// conditioned on photon 2 and is required unless the configuration is exchange symmetric.
pub fn gradient_fields_from_cpds(
    given1: &RealField4,
    given2: Option<&RealField4>,
    map: &ApertureMap,
    config: &CpdConfig,
) -> Result<(GradientField, CpdReport)> {
    config.validate()?;
    let two = condition_stored(given1, map)?;
    let one = match given2 {
        Some(c) => Some(condition_stored(c, map)?),
        None if config.exchange_symmetric => None,
        None => return Err(Error::param("cpd.exchange_symmetric", "asymmetric gradients need CPDs given photon 2")),
    };
    let mut report = CpdReport { segment_size: config.segment_size, ..Default::default() };
    let other = one.as_ref().unwrap_or(&two);
    report.clipped_windows = two.clipped + one.as_ref().map_or(0, |o| o.clipped);
    let g = assemble(map, &two, other, config.min_relative_weight, &mut report)?;
    Ok((g, report))
}

fn assemble(
    map: &ApertureMap,
    two: &Conditioned,
    one: &Conditioned,
    min_relative_weight: f64,
    report: &mut CpdReport,
) -> Result<GradientField> {
    let lenses = map.lenses;
    let n = lenses.len();
    let mut k1 = [vec![0.0; n * n], vec![0.0; n * n]];
    let mut weight = vec![0.0; n * n];
    let mut valid = vec![false; n * n];
    for a in 0..n {
        for b in 0..n {
            let (ab, ba) = (a * n + b, b * n + a);
            k1[0][ab] = one.k[0][ba];
            k1[1][ab] = one.k[1][ba];
            valid[ab] = two.valid[ab] && one.valid[ba];
            weight[ab] = if valid[ab] { 0.5 * (two.mass[ab] + one.mass[ba]) } else { 0.0 };
        }
    }
    // Lenses reached only by far diffraction tails carry numerically meaningless centroids.
    let wmax = weight.iter().cloned().fold(0.0, f64::max);
    for (w, v) in weight.iter_mut().zip(valid.iter_mut()) {
        if *w < min_relative_weight * wmax || *w == 0.0 {
            *w = 0.0;
            *v = false;
        }
    }
    report.invalid_pairs = valid.iter().filter(|v| !**v).count();
    let f = |d: Vec<f64>| RealField4::new(lenses, lenses, d);
    let [k1x, k1y] = k1;
    let [k2x, k2y] = two.k.clone();
    GradientField::new([f(k1x)?, f(k1y)?], [f(k2x)?, f(k2y)?], f(weight)?, valid)
}

/// Gradient fields of an exchange-symmetric JPD: k₂(A,B) from the CPD given A at B, k₁(A,B) = k₂(B,A).
pub fn build_gradient_fields<J: JpdRows + ?Sized>(
    jpd: &J,
    map: &ApertureMap,
    config: &CpdConfig,
) -> Result<(GradientField, CpdReport)> {
    config.validate()?;
    if !config.exchange_symmetric {
        return Err(Error::param(
            "cpd.exchange_symmetric",
            "conditioning on photon 2 needs the transposed jpd; use build_gradient_fields_asymmetric",
        ));
    }
    let two = condition_all(jpd, map, config.segment_size)?;
    let mut report = CpdReport {
        segment_size: config.segment_size,
        tie_breaks: two.ties,
        clipped_windows: two.clipped,
        invalid_pairs: 0,
    };
    let g = assemble(map, &two, &two, config.min_relative_weight, &mut report)?;
    Ok((g, report))
}

/// Gradient fields without exchange symmetry: k₁ comes from conditioning the transposed JPD.
pub fn build_gradient_fields_asymmetric<J: JpdRows + ?Sized, T: JpdRows + ?Sized>(
    jpd: &J,
    transposed: &T,
    map: &ApertureMap,
    config: &CpdConfig,
) -> Result<(GradientField, CpdReport)> {
    config.validate()?;
    let two = condition_all(jpd, map, config.segment_size)?;
    let one = condition_all(transposed, map, config.segment_size)?;
    let mut report = CpdReport {
        segment_size: config.segment_size,
        tie_breaks: two.ties + one.ties,
        clipped_windows: two.clipped + one.clipped,
        invalid_pairs: 0,
    };
    let g = assemble(map, &two, &one, config.min_relative_weight, &mut report)?;
    Ok((g, report))
}
