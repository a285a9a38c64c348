mod common;

use num_complex::Complex64;
use qshws_core::cpd::GradientField;
use qshws_core::model::DoubleGaussianState;
use qshws_core::reconstruct::{
    assemble_wavefunction, interpolate_gradients, momentum_transform, reconstruct_phase, ReconstructionConfig,
};
use qshws_core::tensor::{ComplexField4, GridSpec, RealField4};
use std::collections::VecDeque;

/// Gradients whose one-step differences reproduce `phi` exactly:
/// k_a(p) = (φ(p + e_a) − φ(p))/d, zero on the last slice of each axis.
fn conservative(
    g1: GridSpec,
    g2: GridSpec,
    phi: &dyn Fn([usize; 4]) -> f64,
    weight: &dyn Fn([usize; 4]) -> f64,
) -> GradientField {
    let d = [g1.nx, g1.ny, g2.nx, g2.ny];
    let step = g1.pitch;
    let mut comps: [Vec<f64>; 4] = Default::default();
    let mut w = Vec::new();
    for i1 in 0..d[0] {
        for j1 in 0..d[1] {
            for i2 in 0..d[2] {
                for j2 in 0..d[3] {
                    let c = [i1, j1, i2, j2];
                    for a in 0..4 {
                        let mut n = c;
                        n[a] += 1;
                        comps[a].push(if n[a] < d[a] { (phi(n) - phi(c)) / step } else { 0.0 });
                    }
                    w.push(weight(c));
                }
            }
        }
    }
    let f = |v: Vec<f64>| RealField4::new(g1, g2, v).unwrap();
    let [a, b, c, e] = comps;
    let n = w.len();
    GradientField::new([f(a), f(b)], [f(c), f(e)], f(w), vec![true; n]).unwrap()
}

/// Breadth-first line integral from the anchor using the same one-step rules.
fn path_oracle(g: &GradientField, anchor: usize) -> Vec<f64> {
    let (g1, g2) = (*g.weight.grid1(), *g.weight.grid2());
    let d = [g1.nx, g1.ny, g2.nx, g2.ny];
    let st = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let comps = [g.k1x.data(), g.k1y.data(), g.k2x.data(), g.k2y.data()];
    let n = g.valid.len();
    let mut phase = vec![f64::NAN; n];
    phase[anchor] = 0.0;
    let mut q = VecDeque::from([anchor]);
    while let Some(p) = q.pop_front() {
        for a in 0..4 {
            let c = (p / st[a]) % d[a];
            if c + 1 < d[a] && phase[p + st[a]].is_nan() {
                phase[p + st[a]] = phase[p] + comps[a][p] * g1.pitch;
                q.push_back(p + st[a]);
            }
            if c > 0 && phase[p - st[a]].is_nan() {
                phase[p - st[a]] = phase[p] - comps[a][p - st[a]] * g1.pitch;
                q.push_back(p - st[a]);
            }
        }
    }
    phase
}

fn quad_phi(c: [usize; 4]) -> f64 {
    let x: Vec<f64> = c.iter().map(|&v| v as f64 - 2.0).collect();
    0.3 * x[0] * x[0] - 0.7 * x[1] * x[3] + 0.2 * x[2] * x[2] + 0.5 * x[0] * x[2] - 0.1 * x[3] + 1.3
}

fn bump(c: [usize; 4]) -> f64 {
    let r: f64 = c.iter().map(|&v| (v as f64 - 2.0).powi(2)).sum();
    (-r / 6.0).exp() + 0.01 * c[0] as f64
}

#[test]
fn zero_gradients_give_zero_phase() {
    let g = GridSpec::centered(3, 3, 1e-4).unwrap();
    let f = conservative(g, g, &|_| 0.0, &|c| 1.0 + c[0] as f64);
    for seed in [0, 7, 99] {
        let (p, rep) =
            reconstruct_phase(&f, &ReconstructionConfig { rng_seed: seed, n_repetitions: 5, ..Default::default() })
                .unwrap();
        assert!(p.phase.data().iter().all(|&v| v == 0.0));
        assert!(p.calculated.iter().all(|&c| c));
        assert_eq!(rep.unreached, 0);
    }
}

#[test]
fn chain_matches_cumulative_sum() {
    let g1 = GridSpec::new(12, 1, 0.5, 0.0, 0.0).unwrap();
    let g2 = GridSpec::new(1, 1, 0.5, 0.0, 0.0).unwrap();
    let k = 0.37;
    let f = conservative(g1, g2, &|c| k * 0.5 * c[0] as f64, &|c| if c[0] == 4 { 2.0 } else { 1.0 });
    let (p, _) = reconstruct_phase(&f, &ReconstructionConfig { n_repetitions: 3, ..Default::default() }).unwrap();
    assert_eq!(p.anchor, 4);
    let mut cum = 0.0;
    let mut expect = [0.0; 12];
    for i in 5..12 {
        cum += f.k1x.data()[i - 1] * 0.5;
        expect[i] = cum;
    }
    cum = 0.0;
    for i in (0..4).rev() {
        cum -= f.k1x.data()[i] * 0.5;
        expect[i] = cum;
    }
    for i in 0..12 {
        assert!((p.phase.data()[i] - expect[i]).abs() < 1e-12);
        assert!((p.phase.data()[i] - k * 0.5 * (i as f64 - 4.0)).abs() < 1e-12);
    }
}

#[test]
fn conservative_field_matches_path_oracle_for_any_seed_and_workers() {
    let g = GridSpec::centered(5, 5, 1e-4).unwrap();
    let f = conservative(g, g, &quad_phi, &bump);
    let mut anchor = 0;
    for (i, &w) in f.weight.data().iter().enumerate() {
        if w > f.weight.data()[anchor] {
            anchor = i;
        }
    }
    let oracle = path_oracle(&f, anchor);
    for seed in 0..10u64 {
        let mut first: Option<Vec<f64>> = None;
        for workers in [1, 4, 10] {
            let cfg =
                ReconstructionConfig { rng_seed: seed, n_workers: workers, n_repetitions: 12, ..Default::default() };
            let (p, rep) = reconstruct_phase(&f, &cfg).unwrap();
            assert_eq!(p.anchor, anchor);
            assert_eq!(p.phase.data()[anchor], 0.0);
            for (a, b) in p.phase.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
            }
            assert!(rep.path_noise_rms < 1e-9);
            match &first {
                None => first = Some(p.phase.data().to_vec()),
                Some(v) => assert!(v.iter().zip(p.phase.data()).all(|(a, b)| a.to_bits() == b.to_bits())),
            }
        }
    }
}

#[test]
fn noisy_field_is_averaged_and_symmetrized() {
    let g = GridSpec::centered(4, 4, 1e-4).unwrap();
    // Exchange-symmetric phase φ(A,B) = φ(B,A) plus a nonconservative perturbation applied symmetrically.
    let sym = |c: [usize; 4]| quad_phi(c) + quad_phi([c[2], c[3], c[0], c[1]]);
    let base = conservative(g, g, &sym, &|c| bump([c[0], c[1], c[2], c[3]]) + bump([c[2], c[3], c[0], c[1]]));
    let n = g.len();
    let mut k2x = base.k2x.data().to_vec();
    let mut k1x = base.k1x.data().to_vec();
    for a in 0..n {
        for b in 0..n {
            let e = 0.05 * (((a * 31 + b * 17) % 7) as f64 - 3.0);
            k2x[a * n + b] += e;
            k1x[b * n + a] = k2x[a * n + b];
        }
    }
    let f = |v: Vec<f64>| RealField4::new(g, g, v).unwrap();
    let noisy = GradientField::new(
        [f(k1x), base.k1y.clone()],
        [f(k2x), base.k2y.clone()],
        base.weight.clone(),
        base.valid.clone(),
    )
    .unwrap();
    let (p, rep) = reconstruct_phase(&noisy, &ReconstructionConfig::default()).unwrap();
    assert!(rep.path_noise_rms > 0.0);
    assert_eq!(p.phase.data()[p.anchor], 0.0);
    for a in 0..n {
        for b in 0..n {
            assert_eq!(p.phase.at(a, b), p.phase.at(b, a));
        }
    }
    // Shifting a whole run leaves nothing behind: results are anchored at zero.
    let (q, _) = reconstruct_phase(&noisy, &ReconstructionConfig { symmetrize: false, ..Default::default() }).unwrap();
    assert_eq!(q.phase.data()[q.anchor], 0.0);
}

#[test]
fn disconnected_points_stay_masked() {
    let g = GridSpec::centered(3, 1, 1e-4).unwrap();
    let base = conservative(g, g, &|c| c[0] as f64, &|_| 1.0);
    let mut valid = base.valid.clone();
    // Cut every path to points with photon 1 at x index 2.
    for p2 in 0..3 {
        valid[3 + p2] = false;
    }
    let cut = GradientField::new(
        [base.k1x.clone(), base.k1y.clone()],
        [base.k2x.clone(), base.k2y.clone()],
        base.weight.clone(),
        valid,
    )
    .unwrap();
    let (p, rep) = reconstruct_phase(&cut, &ReconstructionConfig { n_repetitions: 4, ..Default::default() }).unwrap();
    assert_eq!(rep.unreached, 3);
    assert_eq!(rep.diagnostics.len(), 1);
    assert!(!p.calculated[6] && !p.calculated[3]);
}

#[test]
fn interpolation_reproduces_linear_fields() {
    let g = GridSpec::centered(3, 3, 3e-4).unwrap();
    let lin = |c: [usize; 4]| 0.5 * c[0] as f64 - 1.5 * c[1] as f64 + 2.0 * c[2] as f64 + 0.25 * c[3] as f64;
    let f = conservative(g, g, &|c| 0.5 * lin(c).powi(2), &|c| 1.0 + lin(c).abs());
    assert_eq!(interpolate_gradients(&f, 1).unwrap(), f);
    // A field that is linear in the indices.
    let comp = |s: f64| {
        RealField4::from_fn(g, g, |p1, p2| {
            let (a, b) = g.coords(p1);
            let (c, d) = g.coords(p2);
            s * lin([a, b, c, d]) + 3.0
        })
        .unwrap()
    };
    let lf = GradientField::new([comp(1.0), comp(-2.0)], [comp(0.5), comp(4.0)], comp(1.0), vec![true; 81]).unwrap();
    let fine = interpolate_gradients(&lf, 4).unwrap();
    let fg = *fine.grid();
    assert_eq!((fg.nx, fg.ny), (9, 9));
    assert!((fg.pitch - 0.75e-4).abs() < 1e-18);
    for p1 in 0..fg.len() {
        for p2 in 0..fg.len() {
            let (a, b) = fg.coords(p1);
            let (c, d) = fg.coords(p2);
            let l = 0.5 * a as f64 - 1.5 * b as f64 + 2.0 * c as f64 + 0.25 * d as f64;
            let want = l / 4.0 + 3.0;
            assert!((fine.k1x.at(p1, p2) - want).abs() < 1e-12);
            assert!((fine.k2y.at(p1, p2) - (4.0 * l / 4.0 + 3.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn interpolation_masks_invalid_corners() {
    let g = GridSpec::centered(2, 1, 1.0).unwrap();
    let one = RealField4::from_fn(g, g, |_, _| 1.0).unwrap();
    let mut valid = vec![true; 4];
    valid[3] = false;
    let f = GradientField::new([one.clone(), one.clone()], [one.clone(), one.clone()], one, valid).unwrap();
    let fine = interpolate_gradients(&f, 2).unwrap();
    let fg = *fine.grid();
    // Points touching corner (1, 1) are masked, the others are not.
    assert!(fine.valid[fg.index(0, 0) * fg.len() + fg.index(0, 0)]);
    assert!(fine.valid[fg.index(0, 0) * fg.len() + fg.index(2, 0)]);
    assert!(!fine.valid[fg.index(1, 0) * fg.len() + fg.index(1, 0)]);
    assert!(!fine.valid[fg.index(2, 0) * fg.len() + fg.index(2, 0)]);
}

#[test]
fn tenfold_interpolation_tracks_analytic_gradient() {
    let mla = common::aligned_mla(7, 19);
    let lenses = mla.lens_grid().unwrap();
    let s = DoubleGaussianState::new(13.43e-6, 1.143e-3, 0.07, mla.k()).unwrap();
    let comp = |c: usize| {
        RealField4::from_fn(lenses, lenses, |p1, p2| {
            let (r1, r2) = (lenses.position(p1), lenses.position(p2));
            let k = s.photon2_gradient(r1, r2);
            let k1 = s.photon2_gradient(r2, r1);
            [k1[0], k1[1], k[0], k[1]][c]
        })
        .unwrap()
    };
    let ones = RealField4::from_fn(lenses, lenses, |_, _| 1.0).unwrap();
    let n = lenses.len() * lenses.len();
    let g = GradientField::new([comp(0), comp(1)], [comp(2), comp(3)], ones, vec![true; n]).unwrap();
    let fine = interpolate_gradients(&g, 10).unwrap();
    let fg = *fine.grid();
    let (mut lo, mut hi, mut worst) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for p1 in (0..fg.len()).step_by(7) {
        for p2 in (0..fg.len()).step_by(5) {
            let want = s.photon2_gradient(fg.position(p1), fg.position(p2))[0];
            lo = lo.min(want);
            hi = hi.max(want);
            worst = worst.max((fine.k2x.at(p1, p2) - want).abs());
        }
    }
    assert!(worst < 0.01 * (hi - lo), "worst {worst} range {}", hi - lo);
}

#[test]
fn assembled_field_has_the_weights_as_modulus() {
    let g = GridSpec::centered(3, 3, 1e-4).unwrap();
    let f = conservative(g, g, &quad_phi, &bump);
    let (p, _) = reconstruct_phase(&f, &ReconstructionConfig { n_repetitions: 3, ..Default::default() }).unwrap();
    let psi = assemble_wavefunction(&p, &f.weight).unwrap();
    for (v, w) in psi.data().iter().zip(f.weight.data()) {
        assert!((v.norm_sqr() - w).abs() <= 4.0 * f64::EPSILON * w);
    }
    let zero = f.weight.map(|_| 0.0).unwrap();
    let flat = qshws_core::reconstruct::PhaseField { phase: zero, calculated: p.calculated.clone(), anchor: p.anchor };
    let psi0 = assemble_wavefunction(&flat, &f.weight).unwrap();
    for (v, w) in psi0.data().iter().zip(f.weight.data()) {
        assert_eq!(v.im, 0.0);
        assert_eq!(v.re, w.sqrt());
    }
    let other = RealField4::zeros(GridSpec::centered(2, 2, 1e-4).unwrap(), GridSpec::centered(2, 2, 1e-4).unwrap());
    assert!(assemble_wavefunction(&p, &other).is_err());
}

#[test]
fn momentum_transform_is_parseval_and_matches_analytic_spectrum() {
    let n = 24;
    let pitch = 25e-6;
    let g = GridSpec::centered(n, n, pitch).unwrap();
    let s = DoubleGaussianState::new(40e-6, 90e-6, 0.0, 7.757e6).unwrap();
    let psi = s.evaluate(&g, &g).unwrap();
    let spec = momentum_transform(&psi).unwrap();
    let a: f64 = psi.data().iter().map(|v| v.norm_sqr()).sum();
    let b: f64 = spec.data().iter().map(|v| v.norm_sqr()).sum();
    let total = (n * n * n * n) as f64;
    assert!((a - b / total).abs() < 1e-10 * a);

    let qg = *spec.grid1();
    let norm = s.momentum_normalization();
    let scale = pitch.powi(4);
    let mut max = 0.0f64;
    let mut worst = 0.0f64;
    for p1 in 0..qg.len() {
        for p2 in 0..qg.len() {
            let want: Complex64 = norm * s.momentum_amplitude(qg.position(p1), qg.position(p2));
            let got = spec.at(p1, p2) * scale;
            max = max.max(want.norm());
            worst = worst.max((got - want).norm());
        }
    }
    assert!(worst < 1e-3 * max, "worst {worst} of {max}");
    let _: &ComplexField4 = &spec;
}
