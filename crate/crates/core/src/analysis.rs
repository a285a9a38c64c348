//! Comparison of reconstructed fields with theory: spherical-phase fits, correlation measures,
//! the entangled/classical discriminator and plain-text report export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::reconstruct::momentum_transform;
use crate::tensor::{ComplexField4, Field2, GridSpec, RealField4};
use crate::{Error, Result};

/// Paraxial spherical-wave fit φ(ρ) = k|ρ − ρ₀|²/(2z) + c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalFit {
    pub z_fit: f64,
    pub center: [f64; 2],
    pub offset: f64,
    /// 1 − SS_res/SS_tot with weighted sums and a weighted mean.
    pub r_squared: f64,
    pub samples: usize,
}

/// Fit with separate curvatures along x and y: φ = k(x−x₀)²/(2z_x) + k(y−y₀)²/(2z_y) + c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstigmaticFit {
    pub z_fit: [f64; 2],
    /// Quadratic coefficients k/(2z) per axis (rad/m²).
    pub curvature: [f64; 2],
    pub center: [f64; 2],
    pub offset: f64,
    pub r_squared: f64,
    pub samples: usize,
}

struct Samples {
    x: Vec<f64>,
    y: Vec<f64>,
    phi: Vec<f64>,
    w: Vec<f64>,
    scale: f64,
}

fn collect(phase: &Field2<f64>, weights: &Field2<f64>, threshold: f64, needed: usize) -> Result<Samples> {
    let g = *phase.grid();
    if g != *weights.grid() {
        return Err(Error::GridMismatch("phase and weights differ in grid".into()));
    }
    let wmax = weights.data().iter().cloned().fold(0.0, f64::max);
    if !(wmax > 0.0) {
        return Err(Error::EmptyDistribution("fit weights are all zero".into()));
    }
    let mut s = Samples { x: vec![], y: vec![], phi: vec![], w: vec![], scale: g.pitch };
    for p in 0..g.len() {
        let w = weights.data()[p];
        if w > 0.0 && w >= threshold * wmax {
            let [x, y] = g.position(p);
            // Coordinates in units of the sample pitch keep the normal equations well conditioned.
            s.x.push(x / g.pitch);
            s.y.push(y / g.pitch);
            s.phi.push(phase.data()[p]);
            s.w.push(w);
        }
    }
    if s.w.len() < needed {
        return Err(Error::InsufficientSamples { needed, available: s.w.len() });
    }
    Ok(s)
}

/// Weighted least squares; returns coefficients and R².
fn solve(s: &Samples, basis: &dyn Fn(f64, f64) -> Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let m = basis(0.0, 0.0).len();
    let n = s.w.len();
    let mut a = DMatrix::<f64>::zeros(n, m);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let sw = s.w[i].sqrt();
        for (j, v) in basis(s.x[i], s.y[i]).into_iter().enumerate() {
            a[(i, j)] = sw * v;
        }
        b[i] = sw * s.phi[i];
    }
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&b, 1e-12).map_err(|e| Error::param("fit", e.to_string()))?;
    let wsum: f64 = s.w.iter().sum();
    let mean = s.w.iter().zip(&s.phi).map(|(w, p)| w * p).sum::<f64>() / wsum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let model: f64 = basis(s.x[i], s.y[i]).iter().zip(coef.iter()).map(|(u, c)| u * c).sum();
        ss_res += s.w[i] * (s.phi[i] - model).powi(2);
        ss_tot += s.w[i] * (s.phi[i] - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((coef.iter().copied().collect(), r2))
}

/// Weighted fit over samples with weight ≥ threshold·max (threshold 0.1 in the usual protocol).
pub fn fit_spherical_phase(phase: &Field2<f64>, weights: &Field2<f64>, k: f64, threshold: f64) -> Result<SphericalFit> {
    let s = collect(phase, weights, threshold, 6)?;
    let (c, r2) = solve(&s, &|x, y| vec![x * x + y * y, x, y, 1.0])?;
    let h = s.scale;
    let a = c[0] / (h * h);
    if a == 0.0 {
        return Err(Error::param("fit", "phase has no curvature"));
    }
    let center = [-c[1] / h / (2.0 * a), -c[2] / h / (2.0 * a)];
    Ok(SphericalFit {
        z_fit: k / (2.0 * a),
        center,
        offset: c[3] - a * (center[0].powi(2) + center[1].powi(2)),
        r_squared: r2,
        samples: s.w.len(),
    })
}

pub fn fit_astigmatic_phase(
    phase: &Field2<f64>,
    weights: &Field2<f64>,
    k: f64,
    threshold: f64,
) -> Result<AstigmaticFit> {
    let s = collect(phase, weights, threshold, 7)?;
    let (c, r2) = solve(&s, &|x, y| vec![x * x, y * y, x, y, 1.0])?;
    let h = s.scale;
    let (ax, ay) = (c[0] / (h * h), c[1] / (h * h));
    let cx = if ax != 0.0 { -c[2] / h / (2.0 * ax) } else { 0.0 };
    let cy = if ay != 0.0 { -c[3] / h / (2.0 * ay) } else { 0.0 };
    Ok(AstigmaticFit {
        z_fit: [k / (2.0 * ax), k / (2.0 * ay)],
        curvature: [ax, ay],
        center: [cx, cy],
        offset: c[4] - ax * cx * cx - ay * cy * cy,
        r_squared: r2,
        samples: s.w.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    /// Pearson coefficients of x₁x₂ and y₁y₂.
    pub pearson: [f64; 2],
    /// Pearson coefficient of q₁ₓq₂ₓ when a complex field was supplied.
    pub pearson_q: Option<f64>,
    /// Root mean conditional variance of photon 2 given photon 1, per axis (m).
    pub conditional_widths: [f64; 2],
    pub no_correlation_distance: Option<f64>,
}

/// Source parameters for analytic estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub k: f64,
}

/// Covariance of (x₁, y₁, x₂, y₂) under the normalised distribution.
fn moments(jpd: &RealField4) -> Result<[[f64; 4]; 4]> {
    let (g1, g2) = (*jpd.grid1(), *jpd.grid2());
    let mut m = 0.0;
    let mut s = [0.0; 4];
    for p1 in 0..g1.len() {
        let r1 = g1.position(p1);
        for (p2, &v) in jpd.row(p1).iter().enumerate() {
            if v < 0.0 {
                return Err(Error::param("jpd", "must be nonnegative"));
            }
            let r2 = g2.position(p2);
            m += v;
            for (a, c) in [r1[0], r1[1], r2[0], r2[1]].into_iter().enumerate() {
                s[a] += v * c;
            }
        }
    }
    if !(m > 0.0) {
        return Err(Error::EmptyDistribution("correlation input has no mass".into()));
    }
    let mean = s.map(|v| v / m);
    let mut cov = [[0.0; 4]; 4];
    for p1 in 0..g1.len() {
        let r1 = g1.position(p1);
        for (p2, &v) in jpd.row(p1).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let r2 = g2.position(p2);
            let d = [r1[0] - mean[0], r1[1] - mean[1], r2[0] - mean[2], r2[1] - mean[3]];
            for a in 0..4 {
                for b in 0..4 {
                    cov[a][b] += v * d[a] * d[b];
                }
            }
        }
    }
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c /= m;
        }
    }
    Ok(cov)
}

fn pearson_of(cov: &[[f64; 4]; 4], a: usize, b: usize) -> f64 {
    let d = (cov[a][a] * cov[b][b]).sqrt();
    if d > 0.0 {
        (cov[a][b] / d).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Pearson coefficient of x₁, x₂ under a nonnegative 4D (or line) distribution.
pub fn pearson_x(jpd: &RealField4) -> Result<f64> {
    Ok(pearson_of(&moments(jpd)?, 0, 2))
}

/// x₁x₂ Pearson coefficient of the double-Gaussian |ψ|², (b − a)/(a + b) with a = Re 1/(2v₊), b = Re 1/(2v₋).
pub fn analytic_pearson(params: &ModelParams, z: f64) -> f64 {
    let zk = z / params.k;
    let re = |s: f64| s * s / (2.0 * (s.powi(4) + zk * zk));
    let (a, b) = (re(params.sigma_plus), re(params.sigma_minus));
    (b - a) / (a + b)
}

/// Distance where the analytic position correlation changes sign, by bisection.
pub fn no_correlation_distance(params: &ModelParams) -> Result<f64> {
    let f = |z: f64| analytic_pearson(params, z);
    let (mut lo, mut hi) = (0.0, 1e-3);
    if f(lo) >= 0.0 {
        return Err(Error::param("model", "no anticorrelation at z = 0"));
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::param("model", "correlation never changes sign"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pearson q₁ₓq₂ₓ of |ψ̃|² for a complex field.
pub fn momentum_pearson(field: &ComplexField4) -> Result<f64> {
    let spec = momentum_transform(field)?;
    pearson_x(&spec.modulus_squared())
}

pub fn correlation_report(
    jpd: &RealField4,
    field: Option<&ComplexField4>,
    params: Option<&ModelParams>,
) -> Result<CorrelationReport> {
    let cov = moments(jpd)?;
    // Conditional variance of a Gaussian approximation: var(x₂) − cov²/var(x₁).
    let cond = |a: usize, b: usize| {
        let v = cov[b][b] - if cov[a][a] > 0.0 { cov[a][b].powi(2) / cov[a][a] } else { 0.0 };
        v.max(0.0).sqrt()
    };
    Ok(CorrelationReport {
        pearson: [pearson_of(&cov, 0, 2), pearson_of(&cov, 1, 3)],
        pearson_q: field.map(momentum_pearson).transpose()?,
        conditional_widths: [cond(0, 2), cond(1, 3)],
        no_correlation_distance: params.map(no_correlation_distance).transpose()?,
    })
}

/// Photon-2 gradient samples k₂(x₂) at one photon-1 position.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSlice {
    pub x1: f64,
    pub x2: Vec<f64>,
    pub k2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Entangled,
    Classical,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Entangled => "entangled",
            Verdict::Classical => "classical",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrimination {
    pub verdict: Verdict,
    /// Fitted dc/dx₁ of the zero crossing c of k₂(x₂).
    pub rate: f64,
    pub rate_stderr: f64,
    pub entangled_rate: f64,
    pub classical_rate: f64,
}

/// Zero-crossing rates predicted for the entangled state and the classical mixture at distance z.
pub fn predicted_rates(params: &ModelParams, z: f64) -> (f64, f64) {
    let k = params.k;
    let (sp2, sm2) = (params.sigma_plus.powi(2), params.sigma_minus.powi(2));
    let ep = 1.0 / (k * k * sp2 * sp2 + z * z);
    let em = 1.0 / (k * k * sm2 * sm2 + z * z);
    let a = 1.0 / (k * k * sp2 * sp2 / 16.0 + z * z);
    let b = 1.0 / (k * k * sp2 * sm2 / 4.0 + z * z);
    (-(ep - em) / (ep + em), -(a - b) / (a + b))
}

/// Compares how fast the zero crossing of k₂(x₂) moves with x₁ against both model predictions.
///
/// The verdict is the closer model when the predictions differ by more than `min_separation` and by
/// more than four standard errors of the fitted rate; otherwise it is inconclusive.
pub fn discriminate_classical(
    slices: &[GradientSlice],
    params: &ModelParams,
    z: f64,
    min_separation: f64,
) -> Result<Discrimination> {
    let distinct = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    let n_x1 = distinct(&mut slices.iter().map(|s| s.x1).collect());
    if n_x1 < 2 {
        return Err(Error::InsufficientSamples { needed: 2, available: n_x1 });
    }
    let mut xs = Vec::new();
    let mut cs = Vec::new();
    for s in slices {
        if s.x2.len() != s.k2.len() || s.x2.len() < 2 {
            return Err(Error::param("gradient slice", "needs matching x2/k2 with at least two samples"));
        }
        let (slope, icpt) = line_fit(&s.x2, &s.k2);
        let c = -icpt / slope;
        if c.is_finite() {
            xs.push(s.x1);
            cs.push(c);
        }
    }
    let (ent, cla) = predicted_rates(params, z);
    if distinct(&mut xs.clone()) < 2 {
        // Flat gradients have no zero crossing to follow.
        return Ok(Discrimination {
            verdict: Verdict::Inconclusive,
            rate: f64::NAN,
            rate_stderr: f64::INFINITY,
            entangled_rate: ent,
            classical_rate: cla,
        });
    }
    let (rate, icpt) = line_fit(&xs, &cs);
    let n = xs.len() as f64;
    let stderr = if xs.len() > 2 {
        let mx = xs.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let res: f64 = xs.iter().zip(&cs).map(|(x, c)| (c - rate * x - icpt).powi(2)).sum();
        (res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let sep = (ent - cla).abs();
    let verdict = if !(sep > min_separation && sep > 4.0 * stderr) {
        Verdict::Inconclusive
    } else if (rate - ent).abs() < (rate - cla).abs() {
        Verdict::Entangled
    } else {
        Verdict::Classical
    };
    Ok(Discrimination { verdict, rate, rate_stderr: stderr, entangled_rate: ent, classical_rate: cla })
}

/// Least-squares line y = s·x + c.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let s = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (s, my - s * mx)
}

/// Everything one report covers.
#[derive(Debug, Clone, Default)]
pub struct ReportArtifacts {
    pub fits: Vec<(String, SphericalFit)>,
    pub correlations: Vec<(String, CorrelationReport)>,
    pub matrices: Vec<(String, Field2<f64>)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6e}"))
}

/// Writes `fits.csv`, `correlations.csv` and one `<name>.dat` matrix per entry; returns the paths written.
pub fn export_report(artifacts: &ReportArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut fits = String::from("name,z_fit_m,center_x_m,center_y_m,offset_rad,r_squared,samples\n");
    for (name, f) in &artifacts.fits {
        writeln!(
            fits,
            "{name},{:.6e},{:.6e},{:.6e},{:.6e},{:.6},{}",
            f.z_fit, f.center[0], f.center[1], f.offset, f.r_squared, f.samples
        )
        .expect("string write");
    }
    let p = dir.join("fits.csv");
    std::fs::write(&p, fits)?;
    written.push(p);

    let mut cor = String::from(
        "name,pearson_x,pearson_y,pearson_qx,conditional_width_x_m,conditional_width_y_m,no_correlation_z_m\n",
    );
    for (name, c) in &artifacts.correlations {
        writeln!(
            cor,
            "{name},{:.6},{:.6},{},{:.6e},{:.6e},{}",
            c.pearson[0],
            c.pearson[1],
            c.pearson_q.map_or_else(String::new, |v| format!("{v:.6}")),
            c.conditional_widths[0],
            c.conditional_widths[1],
            opt(c.no_correlation_distance)
        )
        .expect("string write");
    }
    let p = dir.join("correlations.csv");
    std::fs::write(&p, cor)?;
    written.push(p);

    for (name, m) in &artifacts.matrices {
        let p = dir.join(format!("{name}.dat"));
        std::fs::write(&p, matrix_text(m))?;
        written.push(p);
    }
    Ok(written)
}

/// Two header lines (dims, pitch) then one row per x index of space-separated values.
pub fn matrix_text(m: &Field2<f64>) -> String {
    let g: GridSpec = *m.grid();
    let mut s = format!("# dims {} {}\n# pitch {:.6e}\n", g.nx, g.ny, g.pitch);
    for i in 0..g.nx {
        let row: Vec<String> = (0..g.ny).map(|j| format!("{:.9e}", m.get(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
