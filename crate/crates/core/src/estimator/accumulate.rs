//! Sort-based sparse accumulation of coincidence products.

use std::ops::Range;

use rayon::prelude::*;

use super::pair_key;
use crate::optics::FrameStack;

const CHUNK: usize = 2048;

/// Run-length counts of sorted keys.
fn runs(mut keys: Vec<u64>) -> Vec<(u64, u64)> {
    keys.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::new();
    for k in keys {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += 1,
            _ => out.push((k, 1)),
        }
    }
    out
}

fn merge(a: Vec<(u64, u64)>, b: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Sensors with at most this many pixel pairs accumulate into a dense count array.
const DENSE_PAIRS: usize = 1 << 22;

fn dense_to_runs(counts: &[u64], n_pix: usize, h: u32) -> Vec<(u64, u64)> {
    // Flat pair index a·n_pix + b is not key order in general, so sort afterwards.
    let mut out: Vec<(u64, u64)> = counts
        .iter()
        .enumerate()
        .filter(|e| *e.1 != 0)
        .map(|(idx, &c)| (pair_key((idx / n_pix) as u32, (idx % n_pix) as u32, h), c))
        .collect();
    out.sort_unstable_by_key(|e| e.0);
    out
}

fn add_dense(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.is_empty() {
        return b;
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Σ_n C_{n,i} C_{n,j} over the listed frames for all ordered pairs i ≠ j.
pub(super) fn count_products(stack: &FrameStack, frames: Vec<usize>) -> Vec<(u64, u64)> {
    let h = stack.height() as u32;
    let n_pix = stack.width() * stack.height();
    if n_pix * n_pix <= DENSE_PAIRS {
        let counts = frames
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut c = vec![0u64; n_pix * n_pix];
                for &n in chunk {
                    let f = stack.frame(n);
                    for &a in f {
                        let row = &mut c[a as usize * n_pix..(a as usize + 1) * n_pix];
                        for &b in f {
                            row[b as usize] += 1;
                        }
                        row[a as usize] -= 1;
                    }
                }
                c
            })
            .reduce(Vec::new, add_dense);
        return dense_to_runs(&counts, n_pix, h);
    }
    frames
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut keys = Vec::new();
            for &n in chunk {
                let f = stack.frame(n);
                for &a in f {
                    for &b in f {
                        if a != b {
                            keys.push(pair_key(a, b, h));
                        }
                    }
                }
            }
            runs(keys)
        })
        .reduce(Vec::new, merge)
}

/// Σ_n (C_{n,i} C_{n+1,j} + C_{n,j} C_{n+1,i}) over consecutive frames of the range, i ≠ j.
pub(super) fn count_successive(stack: &FrameStack, range: Range<usize>) -> Vec<(u64, u64)> {
    let h = stack.height() as u32;
    let starts: Vec<usize> = (range.start..range.end - 1).collect();
    starts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut keys = Vec::new();
            for &n in chunk {
                for &a in stack.frame(n) {
                    for &b in stack.frame(n + 1) {
                        if a == b {
                            continue;
                        }
                        keys.push(pair_key(a, b, h));
                        keys.push(pair_key(b, a, h));
                    }
                }
            }
            runs(keys)
        })
        .reduce(Vec::new, merge)
}

/// Sorted union of two count lists: (key, count in a, count in b).
pub(super) fn merge_counts(a: &[(u64, u64)], b: &[(u64, u64)]) -> Vec<(u64, u64, u64)> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 <= b[j].0);
        let take_b = i >= a.len() || (j < b.len() && b[j].0 <= a[i].0);
        if take_a && take_b {
            out.push((a[i].0, a[i].1, b[j].1));
            i += 1;
            j += 1;
        } else if take_a {
            out.push((a[i].0, a[i].1, 0));
            i += 1;
        } else {
            out.push((b[j].0, 0, b[j].1));
            j += 1;
        }
    }
    out
}
