//! Joint-probability estimation from binary frame stacks.
//!
//! All estimators report N × (per-frame covariance): summed coincidence products minus
//! summed singles products divided by the frame count of their group.

mod accumulate;
mod rows;

pub use rows::{repair_line_artifact, repair_row, JpdEstimate, JpdRows, LineRepaired, SinglesTerm};

use std::ops::Range;

use accumulate::{count_products, count_successive, merge_counts};

use crate::optics::FrameStack;
use crate::tensor::{pack_key, GridSpec, SparseJpd};
use crate::{Diagnostic, Error, Result};

/// Frames per brightness-averaging block.
pub const BRIGHTNESS_BLOCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    Covariance,
    Successive,
    BrightnessSeparation,
}

impl std::str::FromStr for Formula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance" => Ok(Formula::Covariance),
            "successive" => Ok(Formula::Successive),
            "brightness_separation" => Ok(Formula::BrightnessSeparation),
            other => Err(Error::param("formula", format!("unknown formula {other:?}"))),
        }
    }
}

impl std::fmt::Display for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Formula::Covariance => "covariance",
            Formula::Successive => "successive",
            Formula::BrightnessSeparation => "brightness_separation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub formula: Formula,
    /// Largest allowed spread of per-block average brightness.
    pub brightness_window: f64,
    pub line_repair_range: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { formula: Formula::BrightnessSeparation, brightness_window: 100.0, line_repair_range: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    pub range: Range<usize>,
    pub block_averages: Vec<f64>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Longest run of consecutive 1000-frame blocks whose average brightness spans at most the window.
/// Ties go to the earliest run; the trailing partial block counts as a block.
pub fn select_frames(stack: &FrameStack, config: &EstimatorConfig) -> Result<FrameSelection> {
    let n = stack.n_frames();
    if n == 0 {
        return Err(Error::param("frame stack", "is empty"));
    }
    let starts: Vec<usize> = (0..n).step_by(BRIGHTNESS_BLOCK).collect();
    let avgs: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e = (s + BRIGHTNESS_BLOCK).min(n);
            (s..e).map(|f| stack.brightness(f) as f64).sum::<f64>() / (e - s) as f64
        })
        .collect();
    if n < BRIGHTNESS_BLOCK {
        return Ok(FrameSelection {
            range: 0..n,
            block_averages: avgs,
            diagnostics: vec![Diagnostic::new(
                "short_stack",
                format!("{n} frames is fewer than one {BRIGHTNESS_BLOCK}-frame block; using all frames"),
            )],
        });
    }
    let block_end = |b: usize| (starts[b] + BRIGHTNESS_BLOCK).min(n);
    let (mut best, mut best_len) = ((0, 0), 0);
    let mut maxq = std::collections::VecDeque::new();
    let mut minq = std::collections::VecDeque::new();
    let mut lo = 0;
    for hi in 0..avgs.len() {
        while maxq.back().is_some_and(|&b: &usize| avgs[b] <= avgs[hi]) {
            maxq.pop_back();
        }
        maxq.push_back(hi);
        while minq.back().is_some_and(|&b: &usize| avgs[b] >= avgs[hi]) {
            minq.pop_back();
        }
        minq.push_back(hi);
        while avgs[maxq[0]] - avgs[minq[0]] > config.brightness_window {
            lo += 1;
            while maxq[0] < lo {
                maxq.pop_front();
            }
            while minq[0] < lo {
                minq.pop_front();
            }
        }
        let len = block_end(hi) - starts[lo];
        if len > best_len {
            best_len = len;
            best = (lo, hi);
        }
    }
    Ok(FrameSelection { range: starts[best.0]..block_end(best.1), block_averages: avgs, diagnostics: Vec::new() })
}

fn check_range(stack: &FrameStack, range: &Range<usize>, min: usize) -> Result<()> {
    if range.end > stack.n_frames() || range.len() < min {
        return Err(Error::param(
            "frame subset",
            format!("{range:?} must hold at least {min} frame(s) of {}", stack.n_frames()),
        ));
    }
    Ok(())
}

fn pixel_grid(stack: &FrameStack) -> Result<GridSpec> {
    GridSpec::centered(stack.width(), stack.height(), 1.0)
}

fn singles(stack: &FrameStack, frames: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut s = vec![0.0; stack.width() * stack.height()];
    for n in frames {
        for &p in stack.frame(n) {
            s[p as usize] += 1.0;
        }
    }
    s
}

/// Γ = Σ C_i C_j − S_i S_j / N over the subset.
pub fn estimate_covariance(stack: &FrameStack, subset: Range<usize>) -> Result<JpdEstimate> {
    check_range(stack, &subset, 1)?;
    let grid = pixel_grid(stack)?;
    let counts = count_products(stack, subset.clone().collect());
    let products = SparseJpd::from_sorted(grid, counts.into_iter().map(|(k, c)| (k, c as f64)).collect())?;
    let term = SinglesTerm { sums: singles(stack, subset.clone()), frames: subset.len() as f64 };
    Ok(JpdEstimate::new(grid, products, vec![term], subset.len()))
}

/// Γ = Σ C_i C_j − N/(N−1)·Σ (C_{n,i} C_{n+1,j} + C_{n,j} C_{n+1,i})/2.
///
/// The successive-frame term has one fewer frame pair than the product term, so it is averaged over
/// its own N−1 pairs before scaling by N; its symmetrised form keeps Γ exactly symmetric.
pub fn estimate_successive(stack: &FrameStack, subset: Range<usize>) -> Result<JpdEstimate> {
    check_range(stack, &subset, 2)?;
    let grid = pixel_grid(stack)?;
    let nf = subset.len() as f64;
    let p = count_products(stack, subset.clone().collect());
    let q2 = count_successive(stack, subset.clone());
    let merged = merge_counts(&p, &q2);
    let entries = merged
        .into_iter()
        .filter_map(|(k, pc, qc)| {
            let q = qc as f64 * 0.5;
            let v = pc as f64 - (q * nf) / (nf - 1.0);
            (v != 0.0).then_some((k, v))
        })
        .collect();
    let products = SparseJpd::from_sorted(grid, entries)?;
    Ok(JpdEstimate::new(grid, products, Vec::new(), subset.len()))
}

/// Brightness bins of the subset.
#[derive(Debug, Clone, PartialEq)]
pub struct BrightnessBins {
    pub mean_brightness: f64,
    pub counts: [usize; 3],
    pub discarded: usize,
    pub sums: [Vec<f64>; 3],
    /// Frame indices per bin (low, middle, high).
    pub frames: [Vec<usize>; 3],
}

impl BrightnessBins {
    pub fn compute(stack: &FrameStack, subset: Range<usize>) -> Result<Self> {
        check_range(stack, &subset, 1)?;
        let mean = subset.clone().map(|n| stack.brightness(n) as f64).sum::<f64>() / subset.len() as f64;
        let r = mean.sqrt();
        let mut frames: [Vec<usize>; 3] = Default::default();
        let mut discarded = 0;
        for n in subset {
            let b = stack.brightness(n) as f64;
            let bin = if b >= mean - 3.0 * r && b < mean - r {
                0
            } else if b >= mean - r && b < mean + r {
                1
            } else if b >= mean + r && b < mean + 3.0 * r {
                2
            } else {
                discarded += 1;
                continue;
            };
            frames[bin].push(n);
        }
        let sums = [0, 1, 2].map(|b| singles(stack, frames[b].iter().copied()));
        Ok(Self {
            mean_brightness: mean,
            counts: [frames[0].len(), frames[1].len(), frames[2].len()],
            discarded,
            sums,
            frames,
        })
    }
}

/// Γ = Σ_{L∪M∪H} C_i C_j − Σ_b S_{b,i} S_{b,j} / N_b; empty bins contribute nothing.
pub fn estimate_brightness_separation(
    stack: &FrameStack,
    subset: Range<usize>,
) -> Result<(JpdEstimate, BrightnessBins)> {
    let bins = BrightnessBins::compute(stack, subset)?;
    let grid = pixel_grid(stack)?;
    let mut kept: Vec<usize> = bins.frames.iter().flatten().copied().collect();
    kept.sort_unstable();
    let counts = count_products(stack, kept.clone());
    let products = SparseJpd::from_sorted(grid, counts.into_iter().map(|(k, c)| (k, c as f64)).collect())?;
    let terms = (0..3)
        .filter(|&b| bins.counts[b] > 0)
        .map(|b| SinglesTerm { sums: bins.sums[b].clone(), frames: bins.counts[b] as f64 })
        .collect();
    Ok((JpdEstimate::new(grid, products, terms, kept.len()), bins))
}

/// Runs the configured estimator on the subset.
pub fn estimate(
    stack: &FrameStack,
    subset: Range<usize>,
    formula: Formula,
) -> Result<(JpdEstimate, Option<BrightnessBins>)> {
    match formula {
        Formula::Covariance => Ok((estimate_covariance(stack, subset)?, None)),
        Formula::Successive => Ok((estimate_successive(stack, subset)?, None)),
        Formula::BrightnessSeparation => {
            let (j, b) = estimate_brightness_separation(stack, subset)?;
            Ok((j, Some(b)))
        }
    }
}

/// Coincidence key of an ordered pixel pair on a sensor of the given height.
#[inline]
pub(crate) fn pair_key(a: u32, b: u32, height: u32) -> u64 {
    pack_key([(a / height) as usize, (a % height) as usize, (b / height) as usize, (b % height) as usize])
}
