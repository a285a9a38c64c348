use qshws_core::estimator::{
    estimate_brightness_separation, estimate_covariance, estimate_successive, repair_line_artifact, repair_row,
    select_frames, BrightnessBins, EstimatorConfig, JpdRows, LineRepaired,
};
use qshws_core::optics::{sample_frames, Drift, FrameStack, SensorModel};
use qshws_core::tensor::{GridSpec, RealField4, SparseJpd};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 32;

/// Anticorrelated truth on a SIDE×SIDE sensor.
fn truth() -> RealField4 {
    let g = GridSpec::centered(SIDE, SIDE, 1.0).unwrap();
    let f = RealField4::from_fn(g, g, |p1, p2| {
        let [x1, y1] = g.position(p1);
        let [x2, y2] = g.position(p2);
        let d = (x1 - x2).powi(2) + (y1 - y2).powi(2);
        let s = (x1 + x2).powi(2) + (y1 + y2).powi(2);
        (-d / (8.0 * 64.0) - s / (2.0 * 0.49)).exp()
    })
    .unwrap();
    let total = f.sum();
    f.map(|v| v / total).unwrap().with_symmetric().unwrap().with_nonnegative().unwrap()
}

fn sensor(drift: Drift) -> SensorModel {
    SensorModel {
        pixel_pitch: 1.0,
        width: SIDE,
        height: SIDE,
        threshold_rate: 1.0,
        dark_count_prob: 0.0,
        drift,
        line_correlation: 0.0,
    }
}

fn random_stack(w: usize, h: usize, n: usize, p: f64, seed: u64) -> FrameStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n).map(|_| (0..(w * h) as u32).filter(|_| rng.random::<f64>() < p).collect()).collect();
    FrameStack::from_frames(w, h, seed, frames).unwrap()
}

/// Direct sums over dense count vectors.
fn naive_covariance(stack: &FrameStack) -> Vec<f64> {
    let n_pix = stack.width() * stack.height();
    let mut prod = vec![0.0; n_pix * n_pix];
    let mut s = vec![0.0; n_pix];
    for n in 0..stack.n_frames() {
        let mut c = vec![0.0; n_pix];
        for &p in stack.frame(n) {
            c[p as usize] = 1.0;
        }
        for i in 0..n_pix {
            s[i] += c[i];
            for j in 0..n_pix {
                prod[i * n_pix + j] += c[i] * c[j];
            }
        }
    }
    let nf = stack.n_frames() as f64;
    let mut out = vec![0.0; n_pix * n_pix];
    for i in 0..n_pix {
        for j in 0..n_pix {
            if i != j {
                out[i * n_pix + j] = prod[i * n_pix + j] - s[i] * s[j] / nf;
            }
        }
    }
    out
}

fn rows(j: &impl JpdRows) -> Vec<f64> {
    let n = j.pixel_grid().len();
    let mut out = vec![0.0; n * n];
    for p in 0..n {
        j.add_row(p, &mut out[p * n..(p + 1) * n]);
    }
    out
}

#[test]
fn covariance_matches_direct_sums() {
    let stack = random_stack(5, 4, 300, 0.3, 1);
    let est = estimate_covariance(&stack, 0..300).unwrap();
    let oracle = naive_covariance(&stack);
    let n = 20;
    for p1 in 0..n {
        for p2 in 0..n {
            assert!((est.value(p1, p2) - oracle[p1 * n + p2]).abs() < 1e-9);
            assert_eq!(est.value(p1, p2), est.value(p2, p1));
        }
    }
    let r = rows(&est);
    for (a, b) in r.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
    let dense = est.to_sparse().unwrap().to_dense();
    for (a, b) in dense.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((est.total() - oracle.iter().sum::<f64>()).abs() < 1e-6);
}

#[test]
fn sparse_and_dense_accumulation_agree() {
    // 70x70 pixels exceeds the dense threshold; the same frames embedded there must match.
    let small = random_stack(6, 5, 200, 0.2, 2);
    let frames: Vec<Vec<u32>> =
        (0..200).map(|n| small.frame(n).iter().map(|&p| (p / 5) * 70 + p % 5).collect()).collect();
    let big = FrameStack::from_frames(70, 70, 2, frames).unwrap();
    let a = estimate_covariance(&small, 0..200).unwrap();
    let b = estimate_covariance(&big, 0..200).unwrap();
    for p1 in 0..30 {
        for p2 in 0..30 {
            let q1 = (p1 / 5) * 70 + p1 % 5;
            let q2 = (p2 / 5) * 70 + p2 % 5;
            assert_eq!(a.value(p1, p2), b.value(q1, q2));
        }
    }
}

#[test]
fn successive_of_identical_frames_is_zero() {
    let f: Vec<u32> = vec![1, 4, 7, 11];
    let stack = FrameStack::from_frames(4, 4, 0, vec![f; 37]).unwrap();
    let est = estimate_successive(&stack, 0..37).unwrap();
    assert!(est.products().is_empty());
    for p1 in 0..16 {
        for p2 in 0..16 {
            assert_eq!(est.value(p1, p2), 0.0);
        }
    }
    assert!(estimate_successive(&stack, 0..1).is_err());
}

#[test]
fn successive_is_symmetric() {
    let stack = random_stack(4, 4, 500, 0.25, 3);
    let est = estimate_successive(&stack, 0..500).unwrap();
    assert!(est.products().is_symmetric());
}

#[test]
fn single_bin_separation_equals_covariance_exactly() {
    // Every frame has exactly 9 lit pixels, so all land in the middle bin.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = (0..400)
        .map(|_| {
            let mut f: Vec<u32> = rand::seq::index::sample(&mut rng, 36, 9).into_iter().map(|v| v as u32).collect();
            f.sort_unstable();
            f
        })
        .collect();
    let stack = FrameStack::from_frames(6, 6, 0, frames).unwrap();
    let (bs, bins) = estimate_brightness_separation(&stack, 0..400).unwrap();
    assert_eq!(bins.counts, [0, 400, 0]);
    let cov = estimate_covariance(&stack, 0..400).unwrap();
    for p1 in 0..36 {
        for p2 in 0..36 {
            assert_eq!(bs.value(p1, p2).to_bits(), cov.value(p1, p2).to_bits());
        }
    }
}

#[test]
fn bins_follow_brightness_edges() {
    // Mean brightness 16 gives edges 4, 12, 20, 28.
    let counts = [3usize, 4, 11, 12, 19, 20, 27, 28, 20, 16, 16, 16, 16, 16, 16, 16, 16, 16, 16, 16];
    assert_eq!(counts.iter().sum::<usize>(), 320);
    let frames = counts.iter().map(|&c| (0..c as u32).collect()).collect();
    let stack = FrameStack::from_frames(8, 4, 0, frames).unwrap();
    let bins = BrightnessBins::compute(&stack, 0..20).unwrap();
    assert_eq!(bins.mean_brightness, 16.0);
    assert_eq!(bins.counts, [2, 13, 3]);
    assert_eq!(bins.discarded, 2);
    assert_eq!(bins.frames[0], vec![1, 2]);
    assert_eq!(bins.frames[2], vec![5, 6, 8]);
}

#[test]
fn empty_high_bin_contributes_nothing() {
    let mut frames: Vec<Vec<u32>> = vec![(0..16).collect(); 30];
    frames.extend(std::iter::repeat_n((0..8).collect::<Vec<u32>>(), 2));
    let stack = FrameStack::from_frames(8, 4, 0, frames).unwrap();
    let (est, bins) = estimate_brightness_separation(&stack, 0..32).unwrap();
    assert_eq!(bins.counts[2], 0);
    assert!(bins.counts[0] > 0 && bins.counts[1] > 0);
    assert_eq!(est.terms().len(), 2);
    // Pixels lit in every frame are perfectly predictable, so their covariance vanishes per bin.
    assert_eq!(est.value(0, 1), 0.0);
}

#[test]
fn null_stack_has_no_structure() {
    let p = 0.05;
    let n = 20_000;
    let stack = random_stack(8, 8, n, p, 5);
    let est = estimate_covariance(&stack, 0..n).unwrap();
    // Var of Σ C_i C_j − S_i S_j / N for independent Bernoulli pixels is about N p² (1 − p²).
    let sigma = (n as f64 * p * p * (1.0 - p * p)).sqrt();
    let mut worst: f64 = 0.0;
    for p1 in 0..64 {
        for p2 in 0..64 {
            if p1 != p2 {
                worst = worst.max(est.value(p1, p2).abs() / sigma);
            }
        }
    }
    assert!(worst < 4.5, "largest deviation {worst} sigma");
}

fn top_truth(truth: &RealField4, k: usize) -> Vec<(usize, usize, f64)> {
    let n = truth.grid1().len();
    let mut all: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a, b, truth.at(a, b)))
        .collect();
    all.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    all.truncate(k);
    all
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Mean pairs per frame chosen so that the busiest pixel stays below 0.1 counts per frame.
fn pair_rate(truth: &RealField4) -> f64 {
    let n = truth.grid1().len();
    let marg_max = (0..n).map(|p| truth.row(p).iter().sum::<f64>()).fold(0.0, f64::max);
    0.09 / (2.0 * marg_max)
}

#[test]
fn covariance_recovers_known_jpd() {
    let t = truth();
    let stack = sample_frames(&t, &sensor(Drift::NONE), 100_000, pair_rate(&t), 6).unwrap();
    let est = estimate_covariance(&stack, 0..stack.n_frames()).unwrap();
    let top = top_truth(&t, 100);
    let a: Vec<f64> = top.iter().map(|e| e.2).collect();
    let b: Vec<f64> = top.iter().map(|e| est.value(e.0, e.1)).collect();
    let r = pearson(&a, &b);
    assert!(r > 0.9, "pearson {r}");
}

/// Mean estimate over pairs where the truth is negligible.
fn off_support(t: &RealField4, est: &impl Fn(usize, usize) -> f64, abs: bool) -> (f64, f64) {
    let n = t.grid1().len();
    let max = t.max();
    let (mut s, mut s2, mut c) = (0.0, 0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a != b && t.at(a, b) < 1e-6 * max {
                let v = est(a, b);
                s += if abs { v.abs() } else { v };
                s2 += v * v;
                c += 1.0;
            }
        }
    }
    (s / c, s2 / c - (s / c).powi(2))
}

#[test]
fn drift_leaves_positive_background_that_separation_removes() {
    let t = truth();
    let n = 20_000;
    let rate = 40.0;
    let drift = Drift { amplitude: 0.8, period_frames: 5000.0 };
    let free = sample_frames(&t, &sensor(Drift::NONE), n, rate, 7).unwrap();
    let drifting = sample_frames(&t, &sensor(drift), n, rate, 7).unwrap();

    let cov_free = estimate_covariance(&free, 0..n).unwrap();
    let cov_drift = estimate_covariance(&drifting, 0..n).unwrap();
    let (bg_free, _) = off_support(&t, &|a, b| cov_free.value(a, b), false);
    let (bg_drift, _) = off_support(&t, &|a, b| cov_drift.value(a, b), false);
    assert!(bg_drift > 3.0 * bg_free.abs(), "drift {bg_drift} free {bg_free}");

    let succ = estimate_successive(&drifting, 0..n).unwrap();
    let (bs, _) = estimate_brightness_separation(&drifting, 0..n).unwrap();
    let (abs_cov, _) = off_support(&t, &|a, b| cov_drift.value(a, b), true);
    let (abs_succ, _) = off_support(&t, &|a, b| succ.value(a, b), true);
    let (abs_bs, _) = off_support(&t, &|a, b| bs.value(a, b), true);
    assert!(abs_succ < abs_cov, "successive {abs_succ} covariance {abs_cov}");
    assert!(abs_bs * 2.0 <= abs_cov, "separation {abs_bs} covariance {abs_cov}");
}

#[test]
fn successive_is_noisier_without_drift() {
    let t = truth();
    let n = 20_000;
    let free = sample_frames(&t, &sensor(Drift::NONE), n, pair_rate(&t), 8).unwrap();
    let cov = estimate_covariance(&free, 0..n).unwrap();
    let succ = estimate_successive(&free, 0..n).unwrap();
    let (_, v_cov) = off_support(&t, &|a, b| cov.value(a, b), false);
    let (_, v_succ) = off_support(&t, &|a, b| succ.value(a, b), false);
    assert!(v_succ > v_cov, "successive variance {v_succ} covariance {v_cov}");
}

#[test]
fn estimators_converge_to_same_distribution() {
    let t = truth();
    let n = 200_000;
    let stack = sample_frames(&t, &sensor(Drift::NONE), n, pair_rate(&t), 9).unwrap();
    let top = top_truth(&t, 100);
    let normalized = |f: &dyn Fn(usize, usize) -> f64| {
        let v: Vec<f64> = top.iter().map(|e| f(e.0, e.1).max(0.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let cov = estimate_covariance(&stack, 0..n).unwrap();
    let succ = estimate_successive(&stack, 0..n).unwrap();
    let (bs, _) = estimate_brightness_separation(&stack, 0..n).unwrap();
    let all =
        [normalized(&|a, b| cov.value(a, b)), normalized(&|a, b| succ.value(a, b)), normalized(&|a, b| bs.value(a, b))];
    for i in 0..3 {
        for j in i + 1..3 {
            let tv: f64 = 0.5 * all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(tv < 0.1, "estimators {i} and {j}: total variation {tv}");
        }
    }
}

#[test]
fn estimators_are_permutation_equivariant() {
    let stack = random_stack(4, 3, 400, 0.3, 10);
    let perm: Vec<u32> = vec![5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6];
    let frames = (0..400)
        .map(|n| {
            let mut f: Vec<u32> = stack.frame(n).iter().map(|&p| perm[p as usize]).collect();
            f.sort_unstable();
            f
        })
        .collect();
    let permuted = FrameStack::from_frames(4, 3, 0, frames).unwrap();
    let a = estimate_successive(&stack, 0..400).unwrap();
    let b = estimate_successive(&permuted, 0..400).unwrap();
    let (c, _) = estimate_brightness_separation(&stack, 0..400).unwrap();
    let (d, _) = estimate_brightness_separation(&permuted, 0..400).unwrap();
    for p1 in 0..12 {
        for p2 in 0..12 {
            let (q1, q2) = (perm[p1] as usize, perm[p2] as usize);
            assert_eq!(a.value(p1, p2), b.value(q1, q2));
            assert!((c.value(p1, p2) - d.value(q1, q2)).abs() < 1e-9);
        }
    }
}

#[test]
fn frame_selection_rules() {
    let constant = FrameStack::from_frames(4, 4, 0, vec![vec![1, 2, 3]; 3500]).unwrap();
    let sel = select_frames(&constant, &EstimatorConfig::default()).unwrap();
    assert_eq!(sel.range, 0..3500);
    assert!(sel.diagnostics.is_empty());

    let short = FrameStack::from_frames(4, 4, 0, vec![vec![1]; 500]).unwrap();
    let sel = select_frames(&short, &EstimatorConfig::default()).unwrap();
    assert_eq!(sel.range, 0..500);
    assert_eq!(sel.diagnostics.len(), 1);

    // Step in mean brightness at frame 50k: 20 lit pixels before, 200 after.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames: Vec<Vec<u32>> = (0..80_000)
        .map(|n| {
            let k = if n < 50_000 { 20 } else { 200 };
            let k = k + rng.random_range(0..5);
            let mut f: Vec<u32> = rand::seq::index::sample(&mut rng, 1024, k).into_iter().map(|v| v as u32).collect();
            f.sort_unstable();
            f
        })
        .collect();
    let stepped = FrameStack::from_frames(32, 32, 0, frames).unwrap();
    let sel = select_frames(&stepped, &EstimatorConfig::default()).unwrap();
    assert_eq!(sel.range, 0..50_000);
}

fn planted() -> SparseJpd {
    let g = GridSpec::centered(20, 6, 1.0).unwrap();
    let mut entries = Vec::new();
    for x2 in 0..20 {
        for y2 in 0..6 {
            entries.push(([10, 3, x2, y2], 1.0 + 0.1 * y2 as f64 + 0.01 * x2 as f64));
            entries.push(([4, 0, x2, y2], 2.0 + y2 as f64));
        }
    }
    entries.push(([10, 3, 12, 3], 50.0));
    SparseJpd::new(g, entries).unwrap()
}

#[test]
fn line_repair_replaces_spike_and_keeps_other_rows() {
    let j = planted();
    let r = repair_line_artifact(&j, 8).unwrap();
    let expect = 0.5 * (j.get([10, 3, 12, 2]) + j.get([10, 3, 12, 4]));
    assert_eq!(r.get([10, 3, 12, 3]), expect);
    // Outside the reach on the same row, and on other rows, nothing changes.
    assert_eq!(r.get([10, 3, 1, 3]), j.get([10, 3, 1, 3]));
    for (idx, v) in j.iter() {
        if idx[3] != idx[1] {
            assert_eq!(r.get(idx).to_bits(), v.to_bits());
        }
    }
    // Top edge: only the lower neighbour exists.
    assert_eq!(r.get([4, 0, 6, 0]), j.get([4, 0, 6, 1]));
}

#[test]
fn line_repair_sparse_and_row_forms_agree() {
    let j = planted();
    let sparse = repair_line_artifact(&j, 8).unwrap().to_dense();
    let view = LineRepaired { inner: &j, range: 8 };
    let viewed = rows(&view);
    assert_eq!(sparse.data(), &viewed[..]);
}

#[test]
fn line_repair_on_single_row_sensor_zeroes() {
    let g = GridSpec::centered(10, 1, 1.0).unwrap();
    let mut row: Vec<f64> = (0..10).map(|v| v as f64 + 1.0).collect();
    repair_row(&g, 5, &mut row, 2);
    assert_eq!(row, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 9.0, 10.0]);
}
