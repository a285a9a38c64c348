//! Phase integration of the two gradient fields by randomised point spreading.
//!
//! Every repetition starts at the heaviest aperture pair with phase 0 and grows outward along the
//! eight axis directions, each step taken with probability Γ/(2Γmax) + floor. Repetitions follow
//! different paths, so averaging them suppresses path-dependent errors of a nonconservative field.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;

use crate::cpd::GradientField;
use crate::fft::centered_dft_nd;
use crate::tensor::{ComplexField4, GridSpec, RealField4};
use crate::{Diagnostic, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub n_repetitions: usize,
    pub n_workers: usize,
    pub spread_probability_floor: f64,
    pub rng_seed: u64,
    pub interpolation_factor: usize,
    /// Average φ(A,B) with φ(B,A) when the inputs are exchange symmetric.
    pub symmetrize: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            n_repetitions: 50,
            n_workers: 10,
            spread_probability_floor: 0.1,
            rng_seed: 0,
            interpolation_factor: 1,
            symmetrize: true,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repetitions == 0 {
            return Err(Error::param("reconstruct.n_repetitions", "must be >= 1"));
        }
        if self.n_workers == 0 {
            return Err(Error::param("reconstruct.n_workers", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.spread_probability_floor) {
            return Err(Error::param("reconstruct.spread_probability_floor", "must lie in [0, 1]"));
        }
        if self.interpolation_factor == 0 {
            return Err(Error::param("reconstruct.interpolation_factor", "must be >= 1"));
        }
        Ok(())
    }
}

/// Reconstructed phase over the aperture (or interpolated) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    /// Unwrapped phase; zero where not calculated.
    pub phase: RealField4,
    pub calculated: Vec<bool>,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub repetitions: usize,
    pub unreached: usize,
    /// Weighted RMS over points of the spread between repetitions (rad).
    pub path_noise_rms: f64,
    pub diagnostics: Vec<Diagnostic>,
}

fn dims(g: &GradientField) -> [usize; 4] {
    let (a, b) = (g.weight.grid1(), g.weight.grid2());
    [a.nx, a.ny, b.nx, b.ny]
}

fn strides(d: &[usize; 4]) -> [usize; 4] {
    [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1]
}

/// Multilinear refinement of gradients and weights by `factor` per axis; a refined point is
/// invalid when any corner contributing to it is.
pub fn interpolate_gradients(g: &GradientField, factor: usize) -> Result<GradientField> {
    if factor == 0 {
        return Err(Error::param("interpolation_factor", "must be >= 1"));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let refine = |c: &GridSpec| {
        GridSpec::new((c.nx - 1) * factor + 1, (c.ny - 1) * factor + 1, c.pitch / factor as f64, c.origin_x, c.origin_y)
    };
    let (f1, f2) = (refine(g.weight.grid1())?, refine(g.weight.grid2())?);
    let cd = dims(g);
    let fd = [f1.nx, f1.ny, f2.nx, f2.ny];
    let cs = strides(&cd);
    let total: usize = fd.iter().product();
    let sources = [&g.k1x, &g.k1y, &g.k2x, &g.k2y, &g.weight];
    let rows: Vec<([f64; 5], bool)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut base = [0usize; 4];
            let mut frac = [0.0f64; 4];
            for a in (0..4).rev() {
                let i = rem % fd[a];
                rem /= fd[a];
                base[a] = i / factor;
                frac[a] = (i % factor) as f64 / factor as f64;
            }
            let mut acc = [0.0; 5];
            let mut ok = true;
            for corner in 0..16 {
                let mut w = 1.0;
                let mut flat = 0;
                for a in 0..4 {
                    let up = (corner >> a) & 1 == 1;
                    let f = if up { frac[a] } else { 1.0 - frac[a] };
                    if f == 0.0 {
                        w = 0.0;
                        break;
                    }
                    w *= f;
                    flat += (base[a] + up as usize) * cs[a];
                }
                if w == 0.0 {
                    continue;
                }
                if !g.valid[flat] {
                    ok = false;
                    break;
                }
                for (s, src) in acc.iter_mut().zip(&sources) {
                    *s += w * src.data()[flat];
                }
            }
            if ok {
                (acc, true)
            } else {
                ([0.0; 5], false)
            }
        })
        .collect();
    let mut cols: [Vec<f64>; 5] = Default::default();
    for c in cols.iter_mut() {
        c.reserve(total);
    }
    let mut valid = Vec::with_capacity(total);
    for (v, ok) in rows {
        for (c, x) in cols.iter_mut().zip(v) {
            c.push(x);
        }
        valid.push(ok);
    }
    let [k1x, k1y, k2x, k2y, w] = cols;
    let f = |d: Vec<f64>| RealField4::new(f1, f2, d);
    GradientField::new([f(k1x)?, f(k1y)?], [f(k2x)?, f(k2y)?], f(w)?, valid)
}

/// Whether k₁(A,B) = k₂(B,A) and Γ(A,B) = Γ(B,A) hold exactly.
pub fn is_exchange_symmetric(g: &GradientField) -> bool {
    if g.weight.grid1() != g.weight.grid2() {
        return false;
    }
    let n = g.grid().len();
    (0..n).all(|a| {
        (0..n).all(|b| {
            let (ab, ba) = (a * n + b, b * n + a);
            g.valid[ab] == g.valid[ba]
                && g.weight.data()[ab] == g.weight.data()[ba]
                && g.k1x.data()[ab] == g.k2x.data()[ba]
                && g.k1y.data()[ab] == g.k2y.data()[ba]
        })
    })
}

/// One flood fill; returns phases and the reached mask.
fn spread_once(g: &GradientField, anchor: usize, wmax: f64, floor: f64, seed: u64, rep: u64) -> (Vec<f64>, Vec<bool>) {
    let d = dims(g);
    let st = strides(&d);
    let step = g.grid().pitch;
    let comps = [g.k1x.data(), g.k1y.data(), g.k2x.data(), g.k2y.data()];
    let w = g.weight.data();
    let n = g.valid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    let mut phase = vec![0.0; n];
    let mut done = vec![false; n];
    done[anchor] = true;
    let mut queue = VecDeque::from([anchor]);
    while let Some(p) = queue.pop_front() {
        let mut pending = false;
        let mut rem = p;
        let mut coord = [0usize; 4];
        for a in (0..4).rev() {
            coord[a] = rem % d[a];
            rem /= d[a];
        }
        for a in 0..4 {
            for forward in [true, false] {
                let q = if forward {
                    if coord[a] + 1 >= d[a] {
                        continue;
                    }
                    p + st[a]
                } else {
                    if coord[a] == 0 {
                        continue;
                    }
                    p - st[a]
                };
                if done[q] || !g.valid[q] {
                    continue;
                }
                let prob = w[q] / (2.0 * wmax) + floor;
                if prob <= 0.0 {
                    continue;
                }
                if rng.random::<f64>() < prob {
                    phase[q] = if forward { phase[p] + comps[a][p] * step } else { phase[p] - comps[a][q] * step };
                    done[q] = true;
                    queue.push_back(q);
                } else {
                    pending = true;
                }
            }
        }
        if pending {
            queue.push_back(p);
        }
    }
    (phase, done)
}

/// Randomised point-spreading integration; the result is a pure function of the inputs and seed.
pub fn reconstruct_phase(
    g: &GradientField,
    config: &ReconstructionConfig,
) -> Result<(PhaseField, ReconstructionReport)> {
    config.validate()?;
    if g.weight.grid1().pitch != g.weight.grid2().pitch {
        return Err(Error::GridMismatch("both photons' grids need the same step".into()));
    }
    let n = g.valid.len();
    let w = g.weight.data();
    let mut anchor = None;
    for i in 0..n {
        if g.valid[i] && anchor.is_none_or(|a: usize| w[i] > w[a]) {
            anchor = Some(i);
        }
    }
    let anchor = anchor.ok_or_else(|| Error::EmptyDistribution("no valid gradient samples".into()))?;
    let wmax = w[anchor];
    let floor = config.spread_probability_floor;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.n_workers)
        .build()
        .map_err(|e| Error::param("reconstruct.n_workers", e.to_string()))?;

    // Bounded memory: batch size only changes how many fills are alive at once, never the result.
    let batch = config.n_workers.min((200_000_000 / (9 * n).max(1)).max(1));
    let mut base: Option<(Vec<f64>, Vec<bool>)> = None;
    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let mut count = vec![0u32; n];
    let mut start = 0;
    while start < config.n_repetitions {
        let end = (start + batch).min(config.n_repetitions);
        let runs: Vec<(Vec<f64>, Vec<bool>)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|r| spread_once(g, anchor, wmax, floor, config.rng_seed, r as u64))
                .collect()
        });
        for (phase, reached) in runs {
            let (b_phase, b_reached) = base.get_or_insert_with(|| (phase.clone(), reached.clone()));
            // Align on the points both this run and the first one reached.
            let (mut diff, mut m) = (0.0, 0usize);
            for i in 0..n {
                if reached[i] && b_reached[i] {
                    diff += phase[i] - b_phase[i];
                    m += 1;
                }
            }
            let offset = if m > 0 { diff / m as f64 } else { 0.0 };
            // Deviations from the first run are small, which keeps the spread estimate accurate.
            for i in 0..n {
                if reached[i] {
                    let v = phase[i] - offset - if b_reached[i] { b_phase[i] } else { 0.0 };
                    sum[i] += v;
                    sumsq[i] += v * v;
                    count[i] += 1;
                }
            }
        }
        start = end;
    }

    let mut out = vec![0.0; n];
    let calculated: Vec<bool> = count.iter().map(|&c| c > 0).collect();
    let (b_phase, b_reached) = base.as_ref().expect("at least one repetition");
    for i in 0..n {
        if calculated[i] {
            out[i] = sum[i] / count[i] as f64 + if b_reached[i] { b_phase[i] } else { 0.0 };
        }
    }
    let a0 = out[anchor];
    for i in 0..n {
        if calculated[i] {
            out[i] -= a0;
        }
    }
    if config.symmetrize && is_exchange_symmetric(g) {
        let side = g.grid().len();
        for a in 0..side {
            for b in a + 1..side {
                let (ab, ba) = (a * side + b, b * side + a);
                if calculated[ab] && calculated[ba] {
                    let m = 0.5 * (out[ab] + out[ba]);
                    out[ab] = m;
                    out[ba] = m;
                }
            }
        }
        let a0 = out[anchor];
        for i in 0..n {
            if calculated[i] {
                out[i] -= a0;
            }
        }
    }

    let (mut noise, mut wsum) = (0.0, 0.0);
    for i in 0..n {
        if count[i] > 1 {
            let c = count[i] as f64;
            let var = (sumsq[i] / c - (sum[i] / c).powi(2)).max(0.0);
            noise += w[i] * var;
            wsum += w[i];
        }
    }
    let unreached = (0..n).filter(|&i| g.valid[i] && !calculated[i]).count();
    let mut diagnostics = Vec::new();
    if unreached > 0 {
        diagnostics.push(Diagnostic::new(
            "disconnected",
            format!("{unreached} valid points are not connected to the anchor and stay masked"),
        ));
    }
    let phase = RealField4::new(*g.weight.grid1(), *g.weight.grid2(), out)?;
    Ok((
        PhaseField { phase, calculated, anchor },
        ReconstructionReport {
            repetitions: config.n_repetitions,
            unreached,
            path_noise_rms: if wsum > 0.0 { (noise / wsum).sqrt() } else { 0.0 },
            diagnostics,
        },
    ))
}

/// ψ̂ = √Γ · exp(iφ), zero where the phase was not calculated.
pub fn assemble_wavefunction(phase: &PhaseField, weights: &RealField4) -> Result<ComplexField4> {
    if (phase.phase.grid1(), phase.phase.grid2()) != (weights.grid1(), weights.grid2()) {
        return Err(Error::GridMismatch("phase and weights are on different grids".into()));
    }
    if weights.data().iter().any(|&w| w < 0.0) {
        return Err(Error::param("weights", "must be nonnegative"));
    }
    let data = phase
        .phase
        .data()
        .iter()
        .zip(weights.data())
        .zip(&phase.calculated)
        .map(|((&p, &w), &ok)| if ok { Complex64::from_polar(w.sqrt(), p) } else { Complex64::new(0.0, 0.0) })
        .collect();
    ComplexField4::new(*weights.grid1(), *weights.grid2(), data)
}

/// Centered 4D DFT; the output grid holds wave vectors with spacing 2π/(N·pitch).
/// Σ|ψ̃|² = N_total · Σ|ψ|².
pub fn momentum_transform(field: &ComplexField4) -> Result<ComplexField4> {
    let (g1, g2) = (*field.grid1(), *field.grid2());
    let shape = [g1.nx, g1.ny, g2.nx, g2.ny];
    let mut data = field.data().to_vec();
    centered_dft_nd(&mut data, &shape, FftDirection::Forward);
    for g in [&g1, &g2] {
        if g.ny > 1 && g.ny != g.nx {
            return Err(Error::GridMismatch("momentum grids need square or line position grids".into()));
        }
    }
    let q = |g: &GridSpec| {
        let p = 2.0 * std::f64::consts::PI / (g.nx as f64 * g.pitch);
        GridSpec::new(g.nx, g.ny, p, -((g.nx - 1) as f64) * p / 2.0, -((g.ny - 1) as f64) * p / 2.0)
    };
    ComplexField4::new(q(&g1)?, q(&g2)?, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_bad_values() {
        assert!(ReconstructionConfig { n_repetitions: 0, ..Default::default() }.validate().is_err());
        assert!(ReconstructionConfig { spread_probability_floor: 1.5, ..Default::default() }.validate().is_err());
        assert!(ReconstructionConfig::default().validate().is_ok());
    }
}
