use std::f64::consts::PI;

use num_complex::Complex64;
use qshws_core::model::{
    apply_slm_phase, fourier_lens, propagate_numeric, saddle_coefficient, saddle_phase, AstigmaticState,
    DoubleGaussianState, PropagationOptions,
};
use qshws_core::tensor::{ComplexField4, Field2, GridSpec};

const LAMBDA: f64 = 810e-9;

fn k() -> f64 {
    2.0 * PI / LAMBDA
}

fn max_rel_error(num: &ComplexField4, exact: &[Complex64]) -> f64 {
    let peak = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
    num.data()
        .iter()
        .zip(exact)
        .filter(|(_, e)| e.norm() > 1e-3 * peak)
        .map(|(n, e)| (n - e).norm() / e.norm())
        .fold(0.0, f64::max)
}

#[test]
fn zero_distance_is_identity_and_norm_is_preserved() {
    let g = GridSpec::centered(12, 12, 10e-6).unwrap();
    let s = DoubleGaussianState::new(22e-6, 30e-6, 0.0, k()).unwrap();
    let f = s.evaluate(&g, &g).unwrap();
    let (same, _) = propagate_numeric(&f, 0.0, k(), &PropagationOptions::default()).unwrap();
    for (a, b) in same.data().iter().zip(f.data()) {
        assert!((a - b).norm() <= 1e-12 * b.norm().max(1e-300) + 1e-15);
    }
    let (moved, _) = propagate_numeric(&f, 3e-3, k(), &PropagationOptions { pad_factor: 1 }).unwrap();
    let rel = (moved.norm_sqr() - f.norm_sqr()).abs() / f.norm_sqr();
    assert!(rel < 1e-10, "{rel}");
    assert!(moved.is_symmetric());
}

#[test]
fn resolved_grid_matches_analytic_propagation() {
    // Widths several pixels wide and an extent of ~10 sigma: the regime where sampling is faithful.
    let g = GridSpec::centered(32, 32, 10e-6).unwrap();
    let s0 = DoubleGaussianState::new(22e-6, 30e-6, 0.0, k()).unwrap();
    let s = DoubleGaussianState::new(22e-6, 30e-6, 2e-3, k()).unwrap();
    let f0 = s0.evaluate(&g, &g).unwrap();
    let (num, diags) = propagate_numeric(&f0, 2e-3, k(), &PropagationOptions::default()).unwrap();
    assert!(diags.is_empty(), "{diags:?}");
    let pre = s.propagation_prefactor();
    let exact: Vec<Complex64> = s.evaluate(&g, &g).unwrap().data().iter().map(|v| v * pre).collect();
    let err = max_rel_error(&num, &exact);
    assert!(err < 1e-6, "max relative error {err:e}");
}

#[test]
fn undersized_grid_warns() {
    let g = GridSpec::centered(8, 8, 10e-6).unwrap();
    let s0 = DoubleGaussianState::new(22e-6, 200e-6, 0.0, k()).unwrap();
    let (_, diags) =
        propagate_numeric(&s0.evaluate(&g, &g).unwrap(), 1e-3, k(), &PropagationOptions::default()).unwrap();
    assert!(diags.iter().any(|d| d.code == "grid_extent"));
}

#[test]
fn slm_phase_identities() {
    let g = GridSpec::centered(6, 6, 10e-6).unwrap();
    let f = DoubleGaussianState::new(22e-6, 30e-6, 1e-3, k()).unwrap().evaluate(&g, &g).unwrap();
    let zero = Field2::zeros(g);
    assert_eq!(apply_slm_phase(&f, &zero).unwrap(), f);
    let c = 0.37;
    let constant = Field2::from_fn(g, |_, _| c).unwrap();
    let shifted = apply_slm_phase(&f, &constant).unwrap();
    let rot = Complex64::from_polar(1.0, 2.0 * c);
    for (a, b) in shifted.data().iter().zip(f.data()) {
        assert!((a - b * rot).norm() < 1e-15 * b.norm().max(1.0));
        assert!((a.norm() - b.norm()).abs() <= 1e-15 * b.norm().max(1e-300));
    }
    let small = Field2::zeros(GridSpec::centered(4, 4, 10e-6).unwrap());
    assert!(apply_slm_phase(&f, &small).is_err());
}

/// Saddle phase on the lens' front focal plane, then the lens: ±z_s propagation along x/y.
#[test]
fn saddle_modulation_equals_astigmatic_propagation() {
    let n = 64;
    let f3 = 0.05;
    let z_s = 2e-3;
    let k = k();
    let (sp, sm) = (22e-6, 30e-6);
    let mla = GridSpec::line(n, 6e-6).unwrap();
    // Work per axis: the state and the saddle are separable.
    let state = DoubleGaussianState::new(sp, sm, 0.0, k).unwrap();
    let x0 = state.axis_field(&mla, &mla).unwrap();
    let slm_field = fourier_lens(&x0, f3, k, true).unwrap();
    let slm = *slm_field.grid1();
    let a = saddle_coefficient(k, z_s, f3);
    // Along x the saddle is −a x²; along y it is +a y². A line grid only exposes x, so use ±a.
    let px = Field2::from_fn(slm, |i, _| -a * slm.x(i).powi(2)).unwrap();
    let py = Field2::from_fn(slm, |i, _| a * slm.x(i).powi(2)).unwrap();
    let back_x = fourier_lens(&apply_slm_phase(&slm_field, &px).unwrap(), f3, k, false).unwrap();
    let back_y = fourier_lens(&apply_slm_phase(&slm_field, &py).unwrap(), f3, k, false).unwrap();
    assert!((back_x.grid1().pitch - mla.pitch).abs() < 1e-18);

    let astig = AstigmaticState::from_saddle(&state, a, f3).unwrap();
    let prefactor = |z: f64| {
        let s = DoubleGaussianState::new(sp, sm, z.abs(), k).unwrap();
        let p = s.propagation_prefactor().sqrt();
        if z < 0.0 {
            p.conj()
        } else {
            p
        }
    };
    let ex: Vec<Complex64> =
        astig.axis_field_x(&mla, &mla).unwrap().data().iter().map(|v| v * prefactor(astig.z_x())).collect();
    let ey: Vec<Complex64> =
        astig.axis_field_y(&mla, &mla).unwrap().data().iter().map(|v| v * prefactor(astig.z_y())).collect();
    assert!(max_rel_error(&back_x, &ex) < 1e-6, "{}", max_rel_error(&back_x, &ex));
    assert!(max_rel_error(&back_y, &ey) < 1e-6, "{}", max_rel_error(&back_y, &ey));

    // The 2D saddle map has the expected sign structure.
    let g2 = GridSpec::centered(5, 5, 1e-4).unwrap();
    let phi = saddle_phase(&g2, a).unwrap();
    assert!(phi.get(4, 2) < 0.0 && phi.get(2, 4) > 0.0);
}
