use num_complex::Complex64;
use scatrel::frame::unit;
use scatrel::oracle::{
    amplitude, born_amplitude, born_phase_shifts, optical_check, phase_shifts, OracleOptions, PartialWaveSolution,
};
use scatrel::potential::PotentialModel;
use scatrel::Error;
use std::f64::consts::PI;

fn gaussian(n: usize, a: f64) -> PotentialModel {
    PotentialModel::gaussian(n, a, 1.0, 2.0).unwrap()
}

fn solve(n: usize, a: f64, h: f64) -> PartialWaveSolution {
    phase_shifts(&gaussian(n, a), 0.5, h, None, &OracleOptions::default()).unwrap()
}

/// `e^{-x} I_m(x) = (1/2pi) int_0^{2pi} e^{x (cos t - 1)} cos(m t) dt`, by the
/// trapezoid rule (spectrally accurate for this periodic integrand).
fn scaled_bessel_i(m: usize, x: f64) -> f64 {
    let nodes = 4000;
    (0..nodes)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / nodes as f64;
            (x * (t.cos() - 1.0)).exp() * (m as f64 * t).cos()
        })
        .sum::<f64>()
        / nodes as f64
}

/// Born phase shift of `a exp(-r^2/2)` in the plane from Weber's integral
/// `int_0^inf e^{-r^2/2} J_m(kr)^2 r dr = e^{-k^2} I_m(k^2)`.
fn weber_born(a: f64, h: f64, m: usize) -> f64 {
    let k = 1.0 / h;
    -0.5 * PI * (2.0 * a / (h * h)) * scaled_bessel_i(m, k * k)
}

#[test]
fn free_problem_is_trivial() {
    let s = phase_shifts(&PotentialModel::zero(2).unwrap(), 0.5, 0.1, Some(30), &OracleOptions::default()).unwrap();
    assert!(s.phase_shifts.iter().all(|d| *d == 0.0));
    let f = amplitude(&s, &unit(0.0), &unit(1.0)).unwrap();
    assert_eq!(f.value, Complex64::new(0.0, 0.0));
    let rep = optical_check(&s);
    assert_eq!((rep.sigma_forward, rep.sigma_quadrature, rep.defect), (0.0, 0.0, 0.0));
}

#[test]
fn born_quadrature_matches_weber_integral() {
    let h = 0.1;
    let model = gaussian(2, 1e-3);
    let born = born_phase_shifts(&model, 0.5, h, 40, 9.0).unwrap();
    for (m, d) in born.iter().enumerate() {
        let exact = weber_born(1e-3, h, m);
        assert!((d - exact).abs() <= 1e-10 * exact.abs().max(1e-14), "m = {m}: {d} vs {exact}");
    }
}

#[test]
fn weak_phase_shifts_approach_born_quadratically() {
    let h = 0.1;
    let mut errs = Vec::new();
    for a in [1e-3, 2e-3] {
        let s = solve(2, a, h);
        let err = s
            .phase_shifts
            .iter()
            .enumerate()
            .take(30)
            .map(|(m, d)| (d - weber_born(a, h, m)).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let ratio = errs[1] / errs[0];
    assert!((ratio - 4.0).abs() < 0.3, "{errs:?}");
}

#[test]
fn doubling_the_matching_radius_is_harmless() {
    let model = gaussian(2, 0.1);
    let base = phase_shifts(&model, 0.5, 0.1, None, &OracleOptions::default()).unwrap();
    let opts = OracleOptions { matching_radius: Some(2.0 * base.matching_radius), ..Default::default() };
    let wide = phase_shifts(&model, 0.5, 0.1, Some(base.l_max), &opts).unwrap();
    for (a, b) in base.phase_shifts.iter().zip(&wide.phase_shifts) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert!(base.tail_estimate < 1e-12);
}

#[test]
fn amplitude_is_zero_for_vanishing_phase_shifts() {
    let mut s = solve(2, 0.1, 0.2);
    s.phase_shifts.iter_mut().for_each(|d| *d = 0.0);
    assert_eq!(s.amplitude_at(0.7), Complex64::new(0.0, 0.0));
}

/// Closed-form Born amplitude of `a exp(-r^2/2)`.
fn gaussian_born(n: usize, a: f64, h: f64, phi: f64) -> Complex64 {
    let k = 1.0 / h;
    let q = 2.0 * k * (phi / 2.0).sin();
    let u0 = 2.0 * a / (h * h);
    let decay = (-q * q / 2.0).exp();
    if n == 2 {
        -Complex64::from_polar(1.0, PI / 4.0) * u0 * 2.0 * PI * decay / (8.0 * PI * k).sqrt()
    } else {
        Complex64::new(-u0 * (2.0 * PI).powf(1.5) * decay / (4.0 * PI), 0.0)
    }
}

#[test]
fn born_amplitude_matches_the_gaussian_transform() {
    for n in [2, 3] {
        for phi in [0.3, 1.0, 2.5] {
            let b = born_amplitude(&gaussian(n, 0.01), 0.5, 0.5, phi).unwrap();
            let exact = gaussian_born(n, 0.01, 0.5, phi);
            assert!((b - exact).norm() < 1e-12 * exact.norm(), "n={n} phi={phi}: {b} vs {exact}");
        }
    }
}

#[test]
fn weak_coupling_approaches_born_linearly() {
    let h = 0.5;
    let angles = [0.4, 1.0, 1.8];
    for n in [2, 3] {
        let (mut rel, mut shapes) = (Vec::new(), Vec::new());
        for a in [1e-3, 1e-2] {
            let s = solve(n, a, h);
            let vals: Vec<(Complex64, Complex64)> =
                angles.iter().map(|phi| (s.amplitude_at(*phi), gaussian_born(n, a, h, *phi))).collect();
            // Ratio test: shape across angles follows the transform.
            let shape = vals
                .iter()
                .map(|(f, b)| ((f / vals[0].0) / (b / vals[0].1) - 1.0).norm())
                .fold(0.0, f64::max);
            shapes.push(shape);
            rel.push(vals.iter().map(|(f, b)| (f - b).norm() / b.norm()).fold(0.0, f64::max));
        }
        for errs in [&rel, &shapes] {
            let ratio = errs[1] / errs[0];
            assert!(ratio > 7.0 && ratio < 13.0, "n={n}: {errs:?}");
        }
    }
}

#[test]
fn amplitude_is_reciprocal() {
    let s2 = solve(2, 1.0, 0.1);
    let s3 = solve(3, 1.0, 0.2);
    for (a, b) in [(0.1, 1.3), (2.0, -0.4), (-1.0, 2.9)] {
        let (om, th) = (unit(a), unit(b));
        let f = amplitude(&s2, &om, &th).unwrap().value;
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let g = amplitude(&s2, &neg(&th), &neg(&om)).unwrap().value;
        assert!((f - g).norm() <= 1e-10 * f.norm(), "{f} vs {g}");
    }
    let om = [0.0, 0.6, 0.8];
    let th = [0.48, -0.6, 0.64];
    let f = amplitude(&s3, &om, &th).unwrap().value;
    let g = amplitude(&s3, &[-0.48, 0.6, -0.64], &[0.0, -0.6, -0.8]).unwrap().value;
    assert!((f - g).norm() <= 1e-10 * f.norm());
}

#[test]
fn optical_theorem_holds() {
    for n in [2, 3] {
        let s = solve(n, 0.1, 0.1);
        let rep = optical_check(&s);
        assert!(rep.defect <= 1e-8, "n={n}: {rep:?}");
        assert!(rep.sigma_forward > 0.0);
        assert!((s.cross_section() / rep.sigma_forward - 1.0).abs() < 1e-10);
    }
}

#[test]
fn truncation_shows_in_the_optical_defect() {
    let full = solve(2, 0.1, 0.1);
    let half = phase_shifts(&gaussian(2, 0.1), 0.5, 0.1, Some(full.l_max / 2), &OracleOptions::default()).unwrap();
    let (a, b) = (optical_check(&full), optical_check(&half));
    assert!(b.defect > 100.0 * a.defect.max(1e-14), "{a:?} -> {b:?}");
    assert!(b.tail_responsible);
    assert!(!amplitude(&half, &unit(0.0), &unit(1.0)).unwrap().accurate);
    assert!(amplitude(&full, &unit(0.0), &unit(1.0)).unwrap().accurate);
}

#[test]
fn forward_direction_is_excluded() {
    let s = solve(2, 0.1, 0.2);
    assert_eq!(amplitude(&s, &unit(0.3), &unit(0.3)).unwrap_err(), Error::DiagonalExcluded);
}

#[test]
fn oversized_matching_radius_exceeds_the_budget() {
    let opts = OracleOptions { max_radius: 5.0, ..Default::default() };
    let e = phase_shifts(&gaussian(2, 0.1), 0.5, 0.1, None, &opts).unwrap_err();
    assert!(matches!(e, Error::OracleBudget(_)), "{e:?}");
}

#[test]
fn scattering_matrix_varies_smoothly_in_h() {
    // e^{2i delta} is the physical quantity; it must not jump between nearby h.
    let hs = [0.1, 0.1001, 0.1002];
    let s: Vec<_> = hs.iter().map(|h| solve(2, 1.0, *h)).collect();
    for l in 0..40 {
        let e: Vec<Complex64> = s.iter().map(|x| Complex64::from_polar(1.0, 2.0 * x.phase_shifts[l])).collect();
        let second = (e[2] - 2.0 * e[1] + e[0]).norm();
        let first = (e[1] - e[0]).norm();
        assert!(second <= 0.1 * first + 1e-9, "l = {l}: {first} {second}");
    }
}
