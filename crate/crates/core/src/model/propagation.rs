use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::fft::{centered_dft_nd, fft_nd, scale_axis, signed_bin};
use crate::tensor::{ComplexField4, Field2, GridSpec};
use crate::{Diagnostic, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Zero-padding factor per axis before the DFT (1 = periodic).
    pub pad_factor: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { pad_factor: 2 }
    }
}

/// Angular-spectrum propagation: DFT, multiply by exp(−i dz (|q₁|²+|q₂|²)/(2k)), inverse DFT.
pub fn propagate_numeric(
    field: &ComplexField4,
    dz: f64,
    k: f64,
    opts: &PropagationOptions,
) -> Result<(ComplexField4, Vec<Diagnostic>)> {
    if opts.pad_factor == 0 {
        return Err(Error::param("pad_factor", "must be >= 1"));
    }
    if !(k > 0.0) || !dz.is_finite() {
        return Err(Error::param("k", "k must be positive and dz finite"));
    }
    let (g1, g2) = (*field.grid1(), *field.grid2());
    let dims = field.dims();
    let diagnostics = extent_diagnostics(field);

    let padded: Vec<usize> = dims.iter().map(|&n| if n > 1 { n * opts.pad_factor } else { 1 }).collect();
    let total: usize = padded.iter().product();
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    copy_block(field.data(), &dims, &mut buf, &padded, true);

    fft_nd(&mut buf, &padded, FftDirection::Forward);
    let pitches = [g1.pitch, g1.pitch, g2.pitch, g2.pitch];
    for axis in 0..4 {
        let n = padded[axis];
        let w: Vec<Complex64> = (0..n)
            .map(|m| {
                let q = 2.0 * PI * signed_bin(m, n) / (n as f64 * pitches[axis]);
                Complex64::from_polar(1.0, -dz * q * q / (2.0 * k))
            })
            .collect();
        scale_axis(&mut buf, &padded, axis, &w);
    }
    fft_nd(&mut buf, &padded, FftDirection::Inverse);

    let mut out = vec![Complex64::new(0.0, 0.0); field.data().len()];
    copy_block(&buf, &padded, &mut out, &dims, false);
    let mut f = ComplexField4::new(g1, g2, out)?;
    if field.is_symmetric() {
        symmetrize_exact(&mut f);
    }
    Ok((f, diagnostics))
}

/// Copies the overlapping low-index block between a small array and a padded one.
fn copy_block(src: &[Complex64], src_dims: &[usize], dst: &mut [Complex64], dst_dims: &[usize], small_is_src: bool) {
    let small = if small_is_src { src_dims } else { dst_dims };
    let n3 = small[3];
    let (s_dims, d_dims) = (src_dims, dst_dims);
    for a in 0..small[0] {
        for b in 0..small[1] {
            for c in 0..small[2] {
                let so = ((a * s_dims[1] + b) * s_dims[2] + c) * s_dims[3];
                let dof = ((a * d_dims[1] + b) * d_dims[2] + c) * d_dims[3];
                dst[dof..dof + n3].copy_from_slice(&src[so..so + n3]);
            }
        }
    }
}

/// Propagation commutes with exchange; average the two orderings so the flag stays exact.
fn symmetrize_exact(f: &mut ComplexField4) {
    let n = f.grid1().len();
    let data = f.data_mut();
    for p1 in 0..n {
        for p2 in (p1 + 1)..n {
            let v = (data[p1 * n + p2] + data[p2 * n + p1]) * 0.5;
            data[p1 * n + p2] = v;
            data[p2 * n + p1] = v;
        }
    }
    f.set_flags_unchecked(true, false);
}

fn extent_diagnostics(field: &ComplexField4) -> Vec<Diagnostic> {
    let (g1, g2) = (field.grid1(), field.grid2());
    let n2 = g2.len();
    let mut m = 0.0;
    let mut mom = [0.0f64; 4];
    let mut mom2 = [0.0f64; 4];
    for (idx, v) in field.data().iter().enumerate() {
        let p = v.norm_sqr();
        if p == 0.0 {
            continue;
        }
        let [x1, y1] = g1.position(idx / n2);
        let [x2, y2] = g2.position(idx % n2);
        m += p;
        for (c, x) in [x1, y1, x2, y2].into_iter().enumerate() {
            mom[c] += p * x;
            mom2[c] += p * x * x;
        }
    }
    let mut out = Vec::new();
    if m == 0.0 {
        return out;
    }
    let extents = [g1.extent_x(), g1.extent_y(), g2.extent_x(), g2.extent_y()];
    let names = ["x1", "y1", "x2", "y2"];
    for c in 0..4 {
        let mean = mom[c] / m;
        let sigma = (mom2[c] / m - mean * mean).max(0.0).sqrt();
        let n = [g1.nx, g1.ny, g2.nx, g2.ny][c];
        if n > 1 && extents[c] < 8.0 * sigma {
            out.push(Diagnostic::new(
                "grid_extent",
                format!("{} extent {:.3e} m is below 8 marginal sigma ({:.3e} m)", names[c], extents[c], 8.0 * sigma),
            ));
        }
    }
    out
}

/// Multiplies ψ by exp(i(Φ(ρ₁) + Φ(ρ₂))); the phase map must contain every field sample on its lattice.
pub fn apply_slm_phase(field: &ComplexField4, phase_map: &Field2<f64>) -> Result<ComplexField4> {
    let phase1 = lookup_phases(field.grid1(), phase_map)?;
    let phase2 = lookup_phases(field.grid2(), phase_map)?;
    let e1: Vec<Complex64> = phase1.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let e2: Vec<Complex64> = phase2.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let symmetric = field.is_symmetric();
    let mut out =
        ComplexField4::from_fn(*field.grid1(), *field.grid2(), |p1, p2| field.at(p1, p2) * (e1[p1] * e2[p2]))?;
    if symmetric {
        out = out.with_symmetric()?;
    }
    Ok(out)
}

fn lookup_phases(grid: &GridSpec, map: &Field2<f64>) -> Result<Vec<f64>> {
    let mg = map.grid();
    let tol = 1e-9;
    if (grid.pitch - mg.pitch).abs() > tol * mg.pitch {
        return Err(Error::GridMismatch(format!(
            "phase map pitch {} differs from field pitch {}",
            mg.pitch, grid.pitch
        )));
    }
    let ox = (grid.origin_x - mg.origin_x) / mg.pitch;
    let oy = (grid.origin_y - mg.origin_y) / mg.pitch;
    let (sx, sy) = (ox.round(), oy.round());
    if (ox - sx).abs() > tol * ox.abs().max(1.0) || (oy - sy).abs() > tol * oy.abs().max(1.0) {
        return Err(Error::GridMismatch("phase map lattice is offset from the field grid".into()));
    }
    if sx < 0.0 || sy < 0.0 || sx as usize + grid.nx > mg.nx || sy as usize + grid.ny > mg.ny {
        return Err(Error::GridMismatch("phase map does not cover the field grid".into()));
    }
    let (sx, sy) = (sx as usize, sy as usize);
    Ok((0..grid.len())
        .map(|p| {
            let (i, j) = grid.coords(p);
            map.get(i + sx, j + sy)
        })
        .collect())
}

/// Saddle coefficient a = k z_s/(2f²) emulating ±z_s propagation behind a Fourier lens of focal length f.
pub fn saddle_coefficient(k: f64, z_s: f64, f: f64) -> f64 {
    k * z_s / (2.0 * f * f)
}

/// Φ(x, y) = −a(x² − y²).
pub fn saddle_phase(grid: &GridSpec, a: f64) -> Result<Field2<f64>> {
    Field2::from_fn(*grid, |i, j| {
        let (x, y) = (grid.x(i), grid.y(j));
        -a * (x * x - y * y)
    })
}

/// Ideal Fourier lens: ψ_out(ρ) = ∫ ψ_in(ρ') exp(−ik ρ·ρ'/f) dρ' (per photon), via the centered DFT.
/// `inverse` applies the opposite sign with 1/(λf)² scaling so that a round trip is the identity.
pub fn fourier_lens(field: &ComplexField4, f: f64, k: f64, inverse: bool) -> Result<ComplexField4> {
    let (g1, g2) = (*field.grid1(), *field.grid2());
    for g in [&g1, &g2] {
        if g.nx != g.ny && g.ny != 1 {
            return Err(Error::GridMismatch("Fourier lens needs square or line grids".into()));
        }
        if !g.is_centered() {
            return Err(Error::GridMismatch("Fourier lens needs centered grids".into()));
        }
    }
    let dims = field.dims();
    let mut buf = field.data().to_vec();
    centered_dft_nd(&mut buf, &dims, if inverse { FftDirection::Inverse } else { FftDirection::Forward });
    let out_grid = |g: &GridSpec| -> Result<GridSpec> {
        GridSpec::centered(g.nx, g.ny, 2.0 * PI * f / (k * g.nx as f64 * g.pitch))
    };
    let (o1, o2) = (out_grid(&g1)?, out_grid(&g2)?);
    // Continuous-integral scaling: pitch² per 2D photon integral; the inverse DFT's 1/N is undone by the
    // output pitch of the forward direction, leaving (k/(2πf))² per photon.
    let area = |g: &GridSpec| if g.ny == 1 { g.pitch } else { g.pitch * g.pitch };
    let scale = if inverse {
        let n = |g: &GridSpec| g.len() as f64;
        n(&g1) * n(&g2) * area(&g1) * area(&g2) * (k / (2.0 * PI * f)).powi(if g1.ny == 1 { 2 } else { 4 })
    } else {
        area(&g1) * area(&g2)
    };
    for v in buf.iter_mut() {
        *v *= scale;
    }
    let mut out = ComplexField4::new(o1, o2, buf)?;
    if field.is_symmetric() {
        symmetrize_exact(&mut out);
    }
    Ok(out)
}

/// Direct evaluation of Σ_ρ' G(ρ')·exp(−|ρ₁−ρ'|²/σ₋²)·G(ρ₁+ρ₂−ρ')·ΔA.
pub fn modulated_anticorrelated_field(
    g: &Field2<Complex64>,
    sigma_minus: f64,
    grid1: &GridSpec,
    grid2: &GridSpec,
) -> Result<ComplexField4> {
    if !(sigma_minus > 0.0) {
        return Err(Error::param("sigma_minus", "must be positive"));
    }
    let gg = g.grid();
    let p = gg.pitch;
    let tol = 1e-9;
    for grid in [grid1, grid2] {
        if (grid.pitch - p).abs() > tol * p {
            return Err(Error::GridMismatch("G and output grids need a common pitch".into()));
        }
    }
    // ρ₁ + ρ₂ − ρ' must land on G's lattice.
    let sx = (grid1.origin_x + grid2.origin_x - 2.0 * gg.origin_x) / p;
    let sy = (grid1.origin_y + grid2.origin_y - 2.0 * gg.origin_y) / p;
    if (sx - sx.round()).abs() > tol * sx.abs().max(1.0) || (sy - sy.round()).abs() > tol * sy.abs().max(1.0) {
        return Err(Error::GridMismatch("rho1 + rho2 does not fall on G's lattice".into()));
    }
    let (sx, sy) = (sx.round() as i64, sy.round() as i64);
    let nonzero: Vec<(i64, i64, f64, f64, Complex64)> = (0..gg.len())
        .filter_map(|q| {
            let v = g.data()[q];
            if v == Complex64::new(0.0, 0.0) {
                return None;
            }
            let (i, j) = gg.coords(q);
            Some((i as i64, j as i64, gg.x(i), gg.y(j), v))
        })
        .collect();
    let area = if gg.ny == 1 { p } else { p * p };
    let inv_s2 = 1.0 / (sigma_minus * sigma_minus);
    ComplexField4::from_fn(*grid1, *grid2, |p1, p2| {
        let (i1, j1) = grid1.coords(p1);
        let (i2, j2) = grid2.coords(p2);
        let (x1, y1) = (grid1.x(i1), grid1.y(j1));
        let mut acc = Complex64::new(0.0, 0.0);
        for &(ip, jp, xp, yp, gv) in &nonzero {
            let ii = i1 as i64 + i2 as i64 - ip + sx;
            let jj = j1 as i64 + j2 as i64 - jp + sy;
            if ii < 0 || jj < 0 || ii as usize >= gg.nx || jj as usize >= gg.ny {
                continue;
            }
            let d2 = (x1 - xp).powi(2) + (y1 - yp).powi(2);
            acc += gv * (-d2 * inv_s2).exp() * g.get(ii as usize, jj as usize);
        }
        acc * area
    })
}
