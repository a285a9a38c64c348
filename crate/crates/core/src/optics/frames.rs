//! Binary frame stacks: synthesis from a pair distribution and the QSHF container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use super::{SensorModel, SeparableJpd, LINE_ARTIFACT_REACH};
use crate::tensor::RealField4;
use crate::{Error, FormatError, Result};

pub const QSHF_MAGIC: [u8; 4] = *b"QSHF";
const QSHF_VERSION: u8 = 1;
const QSHF_HEADER: usize = 40;

/// Thresholded frames stored as sorted lists of lit pixels (flat index i·height + j).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    width: usize,
    height: usize,
    seed: u64,
    offsets: Vec<usize>,
    pixels: Vec<u32>,
}

impl FrameStack {
    pub fn from_frames(width: usize, height: usize, seed: u64, frames: Vec<Vec<u32>>) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::param("frame size", "width and height must be in 1..=65535"));
        }
        let n_pix = (width * height) as u32;
        let mut offsets = Vec::with_capacity(frames.len() + 1);
        offsets.push(0);
        let mut pixels = Vec::new();
        for (n, mut f) in frames.into_iter().enumerate() {
            f.sort_unstable();
            f.dedup();
            if let Some(&last) = f.last() {
                if last >= n_pix {
                    return Err(Error::IndexOutOfRange(format!("pixel {last} in frame {n}")));
                }
            }
            pixels.extend_from_slice(&f);
            offsets.push(pixels.len());
        }
        Ok(Self { width, height, seed, offsets, pixels })
    }

    pub fn n_frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sorted lit pixels of frame `n`.
    #[inline]
    pub fn frame(&self, n: usize) -> &[u32] {
        &self.pixels[self.offsets[n]..self.offsets[n + 1]]
    }

    #[inline]
    pub fn brightness(&self, n: usize) -> usize {
        self.offsets[n + 1] - self.offsets[n]
    }

    pub fn total_counts(&self) -> usize {
        self.pixels.len()
    }

    /// Undoes (or applies) the imaging lens' 180° rotation.
    pub fn rotate_180(&self) -> Self {
        let (w, h) = (self.width as u32, self.height as u32);
        let frames = (0..self.n_frames())
            .map(|n| {
                self.frame(n)
                    .iter()
                    .map(|&p| {
                        let (i, j) = (p / h, p % h);
                        (w - 1 - i) * h + (h - 1 - j)
                    })
                    .collect()
            })
            .collect();
        Self::from_frames(self.width, self.height, self.seed, frames).expect("rotation stays in range")
    }

    /// Keeps pixels with x index in `xs` and y index in `ys`, renumbered on the smaller sensor.
    pub fn crop(&self, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>) -> Result<Self> {
        if xs.start >= xs.end || ys.start >= ys.end || xs.end > self.width || ys.end > self.height {
            return Err(Error::IndexOutOfRange(format!(
                "crop {xs:?} x {ys:?} outside {}x{} sensor",
                self.width, self.height
            )));
        }
        let h = self.height as u32;
        let nh = (ys.end - ys.start) as u32;
        let (x0, y0) = (xs.start as u32, ys.start as u32);
        let frames = (0..self.n_frames())
            .map(|n| {
                self.frame(n)
                    .iter()
                    .filter_map(|&p| {
                        let (i, j) = ((p / h) as usize, (p % h) as usize);
                        (xs.contains(&i) && ys.contains(&j)).then(|| (i as u32 - x0) * nh + (j as u32 - y0))
                    })
                    .collect()
            })
            .collect();
        Self::from_frames(xs.end - xs.start, ys.end - ys.start, self.seed, frames)
    }

    /// Frames `range` as a new stack.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let frames = range.map(|n| self.frame(n).to_vec()).collect();
        Self::from_frames(self.width, self.height, self.seed, frames).expect("valid frames")
    }
}

/// Population count of one frame.
pub fn frame_brightness(stack: &FrameStack, frame_index: usize) -> Result<usize> {
    if frame_index >= stack.n_frames() {
        return Err(Error::IndexOutOfRange(format!("frame {frame_index} of {}", stack.n_frames())));
    }
    Ok(stack.brightness(frame_index))
}

/// Draws pixel pairs from a normalised JPD.
pub enum PairSampler {
    Dense { table: WeightedAliasIndex<f64>, n_pixels: usize, width: usize, height: usize },
    Separable { x: WeightedAliasIndex<f64>, y: WeightedAliasIndex<f64>, width: usize, height: usize },
}

fn alias(weights: Vec<f64>, what: &str) -> Result<WeightedAliasIndex<f64>> {
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::param("jpd", format!("{what} has negative or non-finite entries")));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::EmptyDistribution(format!("{what} is all zero")));
    }
    WeightedAliasIndex::new(weights).map_err(|e| Error::param("jpd", format!("{what}: {e}")))
}

impl PairSampler {
    pub fn from_dense(jpd: &RealField4) -> Result<Self> {
        let g = jpd.grid1();
        if jpd.grid2() != g {
            return Err(Error::GridMismatch("pair sampling needs one pixel grid for both photons".into()));
        }
        Ok(PairSampler::Dense {
            table: alias(jpd.data().to_vec(), "dense jpd")?,
            n_pixels: g.len(),
            width: g.nx,
            height: g.ny,
        })
    }

    pub fn from_separable(jpd: &SeparableJpd) -> Result<Self> {
        let g = jpd.pixel_grid();
        Ok(PairSampler::Separable {
            x: alias(jpd.x().data().to_vec(), "x factor")?,
            y: alias(jpd.y().data().to_vec(), "y factor")?,
            width: g.nx,
            height: g.ny,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            PairSampler::Dense { width, height, .. } | PairSampler::Separable { width, height, .. } => {
                (*width, *height)
            }
        }
    }

    /// One pair of flat pixel indices.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        match self {
            PairSampler::Dense { table, n_pixels, .. } => {
                let k = table.sample(rng);
                ((k / n_pixels) as u32, (k % n_pixels) as u32)
            }
            PairSampler::Separable { x, y, width, height } => {
                let a = x.sample(rng);
                let b = y.sample(rng);
                let (i1, i2) = (a / width, a % width);
                let (j1, j2) = (b / height, b % height);
                ((i1 * height + j1) as u32, (i2 * height + j2) as u32)
            }
        }
    }
}

/// An emitted pair with both photons registered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledPair {
    pub frame: u64,
    pub p1: u32,
    pub p2: u32,
}

/// Frame synthesis from a dense focal-plane JPD.
pub fn sample_frames(
    jpd: &RealField4,
    sensor: &SensorModel,
    n_frames: usize,
    mean_pairs_per_frame: f64,
    seed: u64,
) -> Result<FrameStack> {
    let sampler = PairSampler::from_dense(jpd)?;
    Ok(sample_frames_from(&sampler, sensor, n_frames, mean_pairs_per_frame, seed, false)?.0)
}

/// Frame synthesis; frame n draws from its own ChaCha stream (seed, n), so output is
/// independent of how frames are split across threads. With `trace`, also returns every
/// emitted pair whose two photons were both registered.
pub fn sample_frames_from(
    sampler: &PairSampler,
    sensor: &SensorModel,
    n_frames: usize,
    mean_pairs_per_frame: f64,
    seed: u64,
    trace: bool,
) -> Result<(FrameStack, Vec<SampledPair>)> {
    sensor.validate()?;
    if sampler.shape() != (sensor.width, sensor.height) {
        return Err(Error::GridMismatch(format!(
            "jpd pixel grid {:?} differs from sensor {}x{}",
            sampler.shape(),
            sensor.width,
            sensor.height
        )));
    }
    if !(mean_pairs_per_frame >= 0.0 && mean_pairs_per_frame.is_finite()) {
        return Err(Error::param("mean_pairs_per_frame", "must be finite and >= 0"));
    }
    let n_pix = (sensor.width * sensor.height) as u64;
    let dark = if sensor.dark_count_prob > 0.0 {
        Some(Binomial::new(n_pix, sensor.dark_count_prob).map_err(|e| Error::param("dark_count_prob", e.to_string()))?)
    } else {
        None
    };
    let h = sensor.height as u32;
    let w = sensor.width as u32;

    let frames: Vec<(Vec<u32>, Vec<SampledPair>)> = (0..n_frames as u64)
        .into_par_iter()
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            let rate = mean_pairs_per_frame * sensor.drift.factor(n);
            let pairs = if rate > 0.0 { Poisson::new(rate).map(|d| d.sample(&mut rng) as u64).unwrap_or(0) } else { 0 };
            let mut lit = Vec::new();
            let mut truth = Vec::new();
            for _ in 0..pairs {
                let (p1, p2) = sampler.sample(&mut rng);
                let r1 = rng.random::<f64>() < sensor.threshold_rate;
                let r2 = rng.random::<f64>() < sensor.threshold_rate;
                if r1 {
                    lit.push(p1);
                }
                if r2 {
                    lit.push(p2);
                }
                if trace && r1 && r2 {
                    truth.push(SampledPair { frame: n, p1, p2 });
                }
            }
            if let Some(d) = &dark {
                let count = d.sample(&mut rng);
                for _ in 0..count {
                    lit.push(rng.random_range(0..n_pix) as u32);
                }
            }
            if sensor.line_correlation > 0.0 {
                let registered = lit.len();
                for idx in 0..registered {
                    if rng.random::<f64>() < sensor.line_correlation {
                        let p = lit[idx];
                        let off = rng.random_range(1..=LINE_ARTIFACT_REACH as u32);
                        let i = p / h + off;
                        if i < w {
                            lit.push(i * h + p % h);
                        }
                    }
                }
            }
            lit.sort_unstable();
            lit.dedup();
            (lit, truth)
        })
        .collect();

    let mut truth = Vec::new();
    let mut lists = Vec::with_capacity(frames.len());
    for (f, t) in frames {
        lists.push(f);
        truth.extend(t);
    }
    Ok((FrameStack::from_frames(sensor.width, sensor.height, seed, lists)?, truth))
}

/// QSHF: magic, version, 3 reserved bytes, u64 n_frames/width/height/seed, then per frame
/// `height` rows of `ceil(width/8)` bytes, pixel x at bit x%8 (LSB first) of byte x/8.
pub fn write_frames<W: Write>(stack: &FrameStack, sink: &mut W) -> Result<u64> {
    let mut h = [0u8; QSHF_HEADER];
    h[0..4].copy_from_slice(&QSHF_MAGIC);
    h[4] = QSHF_VERSION;
    h[8..16].copy_from_slice(&(stack.n_frames() as u64).to_le_bytes());
    h[16..24].copy_from_slice(&(stack.width as u64).to_le_bytes());
    h[24..32].copy_from_slice(&(stack.height as u64).to_le_bytes());
    h[32..40].copy_from_slice(&stack.seed.to_le_bytes());
    sink.write_all(&h)?;
    let row = stack.width.div_ceil(8);
    let frame_bytes = row * stack.height;
    let mut buf = vec![0u8; frame_bytes];
    let hh = stack.height as u32;
    for n in 0..stack.n_frames() {
        buf.iter_mut().for_each(|b| *b = 0);
        for &p in stack.frame(n) {
            let (i, j) = ((p / hh) as usize, (p % hh) as usize);
            buf[j * row + i / 8] |= 1 << (i % 8);
        }
        sink.write_all(&buf)?;
    }
    Ok((QSHF_HEADER + frame_bytes * stack.n_frames()) as u64)
}

pub fn read_frames<R: Read>(source: &mut R) -> Result<FrameStack> {
    let mut h = Vec::new();
    source.take(QSHF_HEADER as u64).read_to_end(&mut h)?;
    if h.len() < QSHF_HEADER {
        return Err(FormatError::Truncated { expected: QSHF_HEADER as u64, actual: h.len() as u64, offset: 0 }.into());
    }
    let magic: [u8; 4] = h[0..4].try_into().unwrap();
    if magic != QSHF_MAGIC {
        return Err(FormatError::BadMagic { expected: QSHF_MAGIC, found: magic }.into());
    }
    if h[4] != QSHF_VERSION {
        return Err(FormatError::UnsupportedVersion { found: h[4], offset: 4 }.into());
    }
    if h[5..8] != [0, 0, 0] {
        return Err(FormatError::InvalidHeader { reason: "reserved bytes must be zero".into(), offset: 5 }.into());
    }
    let word = |at: usize| u64::from_le_bytes(h[at..at + 8].try_into().unwrap());
    let (n, w, ht, seed) = (word(8), word(16), word(24), word(32));
    if w == 0 || ht == 0 || w > u16::MAX as u64 || ht > u16::MAX as u64 {
        return Err(FormatError::InvalidHeader { reason: format!("frame size {w}x{ht}"), offset: 16 }.into());
    }
    let (w, ht) = (w as usize, ht as usize);
    let row = w.div_ceil(8);
    let frame_bytes = row * ht;
    let expected = (frame_bytes as u64)
        .checked_mul(n)
        .ok_or_else(|| FormatError::InvalidHeader { reason: "frame count overflows".into(), offset: 8 })?;
    let mut payload = Vec::new();
    source.take(expected).read_to_end(&mut payload)?;
    if (payload.len() as u64) < expected {
        return Err(
            FormatError::Truncated { expected, actual: payload.len() as u64, offset: QSHF_HEADER as u64 }.into()
        );
    }
    let pad_mask: u8 = if w % 8 == 0 { 0 } else { !((1u16 << (w % 8)) as u8).wrapping_sub(1) };
    let mut frames = Vec::with_capacity(n as usize);
    for (f, chunk) in payload.chunks_exact(frame_bytes.max(1)).enumerate().take(n as usize) {
        let mut lit = Vec::new();
        for j in 0..ht {
            let r = &chunk[j * row..(j + 1) * row];
            if r[row - 1] & pad_mask != 0 {
                return Err(FormatError::InvalidPayload {
                    reason: "padding bits set".into(),
                    offset: (QSHF_HEADER + f * frame_bytes + j * row + row - 1) as u64,
                }
                .into());
            }
            for (bi, &byte) in r.iter().enumerate() {
                let mut b = byte;
                while b != 0 {
                    let bit = b.trailing_zeros() as usize;
                    lit.push(((bi * 8 + bit) * ht + j) as u32);
                    b &= b - 1;
                }
            }
        }
        frames.push(lit);
    }
    FrameStack::from_frames(w, ht, seed, frames)
}

pub fn write_frames_file(stack: &FrameStack, path: &Path) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_frames(stack, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_frames_file(path: &Path) -> Result<FrameStack> {
    read_frames(&mut BufReader::new(File::open(path)?))
}
