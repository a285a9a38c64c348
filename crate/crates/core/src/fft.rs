//! Multi-dimensional FFT over row-major arrays.

use num_complex::Complex64;
use std::f64::consts::PI;

use rustfft::{FftDirection, FftPlanner};

/// In-place FFT along every axis of a row-major array with the given shape.
/// The inverse transform is scaled by 1/N so that forward followed by inverse is the identity.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], direction: FftDirection) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total, "shape does not match data length");
    let mut planner = FftPlanner::new();
    for axis in 0..shape.len() {
        fft_axis(data, shape, axis, &mut planner, direction);
    }
    if direction == FftDirection::Inverse {
        let scale = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn fft_axis(
    data: &mut [Complex64],
    shape: &[usize],
    axis: usize,
    planner: &mut FftPlanner<f64>,
    direction: FftDirection,
) {
    let n = shape[axis];
    if n <= 1 {
        return;
    }
    let fft = planner.plan_fft(n, direction);
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    if stride == 1 {
        for line in data.chunks_exact_mut(n) {
            fft.process_with_scratch(line, &mut scratch);
        }
        return;
    }
    // Gather a block of strided lines at once so the inner copy runs over contiguous memory.
    let block = stride.min(64);
    let mut buf = vec![Complex64::new(0.0, 0.0); n * block];
    for o in 0..outer {
        let base = o * n * stride;
        let mut s0 = 0;
        while s0 < stride {
            let w = block.min(stride - s0);
            for m in 0..n {
                let src = &data[base + m * stride + s0..base + m * stride + s0 + w];
                for (b, v) in src.iter().enumerate() {
                    buf[b * n + m] = *v;
                }
            }
            for b in 0..w {
                fft.process_with_scratch(&mut buf[b * n..(b + 1) * n], &mut scratch);
            }
            for m in 0..n {
                let dst = &mut data[base + m * stride + s0..base + m * stride + s0 + w];
                for (b, v) in dst.iter_mut().enumerate() {
                    *v = buf[b * n + m];
                }
            }
            s0 += w;
        }
    }
}

/// DFT with both sample and frequency indices centered: bin m pairs with sample n through
/// exp(∓2πi (m − c)(n − c)/N), c = (N − 1)/2, along every axis. Inverse is scaled by 1/N.
pub fn centered_dft_nd(data: &mut [Complex64], shape: &[usize], direction: FftDirection) {
    let sign = match direction {
        FftDirection::Forward => 1.0,
        FftDirection::Inverse => -1.0,
    };
    for (axis, &n) in shape.iter().enumerate() {
        if n > 1 {
            let c = (n as f64 - 1.0) / 2.0;
            let w: Vec<Complex64> =
                (0..n).map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * c * k as f64 / n as f64)).collect();
            scale_axis(data, shape, axis, &w);
        }
    }
    fft_nd(data, shape, direction);
    for (axis, &n) in shape.iter().enumerate() {
        if n > 1 {
            let c = (n as f64 - 1.0) / 2.0;
            // c·m twiddle and the constant c² term, reduced mod N to keep the argument small.
            let cc = (c * c) % n as f64;
            let w: Vec<Complex64> =
                (0..n).map(|m| Complex64::from_polar(1.0, sign * 2.0 * PI * (c * m as f64 - cc) / n as f64)).collect();
            scale_axis(data, shape, axis, &w);
        }
    }
}

/// Multiplies every line along `axis` elementwise by `w`.
pub fn scale_axis(data: &mut [Complex64], shape: &[usize], axis: usize, w: &[Complex64]) {
    let n = shape[axis];
    assert_eq!(w.len(), n);
    let stride: usize = shape[axis + 1..].iter().product();
    for (idx, v) in data.iter_mut().enumerate() {
        *v *= w[(idx / stride) % n];
    }
}

/// Signed DFT frequency index of bin `m` out of `n` (0, 1, ..., -1).
#[inline]
pub fn signed_bin(m: usize, n: usize) -> f64 {
    if m < n.div_ceil(2) {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_2d(x: &[Complex64], n0: usize, n1: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n0 * n1];
        for a in 0..n0 {
            for b in 0..n1 {
                let mut acc = Complex64::new(0.0, 0.0);
                for p in 0..n0 {
                    for q in 0..n1 {
                        let ph =
                            -2.0 * std::f64::consts::PI * ((a * p) as f64 / n0 as f64 + (b * q) as f64 / n1 as f64);
                        acc += x[p * n1 + q] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[a * n1 + b] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let (n0, n1) = (5, 6);
        let x: Vec<Complex64> =
            (0..n0 * n1).map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let mut y = x.clone();
        fft_nd(&mut y, &[n0, n1], FftDirection::Forward);
        let z = naive_dft_2d(&x, n0, n1);
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).norm() < 1e-10);
        }
        fft_nd(&mut y, &[n0, n1], FftDirection::Inverse);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn centered_dft_matches_direct_sum() {
        for n in [4usize, 5] {
            let x: Vec<Complex64> = (0..n).map(|k| Complex64::new(k as f64 + 1.0, (k * k) as f64 * 0.1)).collect();
            let mut y = x.clone();
            centered_dft_nd(&mut y, &[n], FftDirection::Forward);
            let c = (n as f64 - 1.0) / 2.0;
            for m in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, v) in x.iter().enumerate() {
                    acc += v * Complex64::from_polar(1.0, -2.0 * PI * (m as f64 - c) * (k as f64 - c) / n as f64);
                }
                assert!((acc - y[m]).norm() < 1e-10, "n={n} m={m}");
            }
            centered_dft_nd(&mut y, &[n], FftDirection::Inverse);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn signed_bins() {
        let v: Vec<f64> = (0..5).map(|m| signed_bin(m, 5)).collect();
        assert_eq!(v, vec![0.0, 1.0, 2.0, -2.0, -1.0]);
        let v: Vec<f64> = (0..4).map(|m| signed_bin(m, 4)).collect();
        assert_eq!(v, vec![0.0, 1.0, -2.0, -1.0]);
    }
}
