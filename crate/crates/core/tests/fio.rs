use num_complex::Complex64;
use scatrel::fio::{
    control_symbol, l2_norm, node, order_test, quantize_apply, vanishing_symbol, CovectorField, FioOptions,
    SymbolTerm, TorusKernel, TorusSymbol,
};
use scatrel::flow::HamiltonianSystem;
use scatrel::frame::{angle, dot};
use scatrel::oracle::OracleOptions;
use scatrel::potential::PotentialModel;
use scatrel::relation::{sample, RelationPatch, SampleOptions};
use scatrel::Error;
use std::f64::consts::PI;
use std::sync::Arc;

const HS: [f64; 5] = [0.2, 0.14, 0.1, 0.07, 0.05];

fn phase(a: f64, b: f64) -> f64 {
    (a - b).cos() + 0.3 * a.sin() * (2.0 * b).sin()
}

fn grad(a: f64, b: f64) -> [f64; 2] {
    [-(a - b).sin() + 0.3 * a.cos() * (2.0 * b).sin(), (a - b).sin() + 0.6 * a.sin() * (2.0 * b).cos()]
}

fn amp(a: f64, b: f64) -> f64 {
    1.5 + (a + 2.0 * b).sin()
}

fn random_slice(n: usize, seed: u64) -> Vec<Complex64> {
    // Small LCG keeps the test free of extra dependencies on RNG streams.
    let mut s = seed;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..n * n).map(|_| Complex64::new(next(), next())).collect()
}

#[test]
fn identity_symbol_is_the_identity() {
    let n = 32;
    let u = random_slice(n, 1);
    let v = quantize_apply(&TorusSymbol::identity(n, 1.0), &u, 0.1).unwrap();
    for (a, b) in u.iter().zip(&v) {
        assert!((a - b).norm() < 1e-13);
    }
}

#[test]
fn zero_symbol_annihilates() {
    let n = 32;
    let sym = TorusSymbol {
        n,
        terms: vec![SymbolTerm { spatial: None, momentum: Arc::new(|_| Complex64::new(0.0, 0.0)) }],
        vanishing_order_on_sr: 0,
        xi_support: 1.0,
    };
    let v = quantize_apply(&sym, &random_slice(n, 2), 0.1).unwrap();
    assert!(v.iter().all(|x| *x == Complex64::new(0.0, 0.0)));
}

#[test]
fn multiplier_matches_a_direct_transform() {
    let (n, h) = (16usize, 0.15);
    let u = random_slice(n, 3);
    let spatial: Vec<Complex64> =
        (0..n * n).map(|idx| Complex64::new(node(n, idx / n).cos(), node(n, idx % n).sin())).collect();
    let m = |xi: [f64; 2]| Complex64::new(xi[0] * xi[0], xi[1]);
    let sym = TorusSymbol {
        n,
        terms: vec![SymbolTerm { spatial: Some(spatial.clone()), momentum: Arc::new(m) }],
        vanishing_order_on_sr: 0,
        xi_support: 0.2 * n as f64 * h,
    };
    let fast = quantize_apply(&sym, &u, h).unwrap();

    let freq = |k: usize| if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
    let mut coeff = vec![Complex64::new(0.0, 0.0); n * n];
    for (k, c) in coeff.iter_mut().enumerate() {
        for (x, v) in u.iter().enumerate() {
            let ph = -(freq(k / n) * node(n, x / n) + freq(k % n) * node(n, x % n));
            *c += v * Complex64::from_polar(1.0, ph);
        }
        *c /= (n * n) as f64;
    }
    for x in 0..n * n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in coeff.iter().enumerate() {
            let (ja, jb) = (freq(k / n), freq(k % n));
            let ph = ja * node(n, x / n) + jb * node(n, x % n);
            acc += m([h * ja, h * jb]) * c * Complex64::from_polar(1.0, ph);
        }
        assert!((spatial[x] * acc - fast[x]).norm() < 1e-12, "x = {x}");
    }
}

#[test]
fn under_resolved_grids_are_refused() {
    let sym = TorusSymbol::identity(64, 4.0);
    let e = quantize_apply(&sym, &random_slice(64, 4), 0.05).unwrap_err();
    assert_eq!(e, Error::Aliasing { resolution: 64, required: 200 });
}

fn synthetic_setup(n: usize, hs: &[f64]) -> (TorusKernel, CovectorField, FioOptions) {
    let opts = FioOptions::default();
    let kernel = TorusKernel::synthetic(n, hs, phase, amp);
    let field = CovectorField::exact(n, &opts.support, grad);
    (kernel, field, opts)
}

#[test]
fn synthetic_kernel_gains_one_power() {
    let (kernel, field, opts) = synthetic_setup(256, &HS);
    let rep = order_test(&kernel, &field, &opts).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!((rep.slope_gain - 1.0).abs() < 0.1, "{rep:?}");
    assert!(rep.slope_control.abs() < 0.1, "{rep:?}");
    assert!(!rep.vacuous);
}

#[test]
fn misplaced_covector_gains_nothing() {
    let opts = FioOptions::default();
    let kernel = TorusKernel::synthetic(256, &HS, phase, amp);
    let field = CovectorField::exact(256, &opts.support, |a, b| {
        let g = grad(a, b);
        [g[0] + 0.5, g[1] - 0.5]
    });
    let rep = order_test(&kernel, &field, &opts).unwrap();
    assert!(!rep.pass);
    assert!(rep.slope_gain.abs() < 0.2, "{rep:?}");
}

#[test]
fn grid_refinement_is_stable() {
    let hs = [0.2, 0.14, 0.1, 0.07];
    let (k1, f1, opts) = synthetic_setup(256, &hs);
    let (k2, f2, _) = synthetic_setup(512, &hs);
    let (a, b) = (order_test(&k1, &f1, &opts).unwrap(), order_test(&k2, &f2, &opts).unwrap());
    for (x, y) in a.norms_cut.iter().zip(&b.norms_cut).chain(a.norms_control.iter().zip(&b.norms_control)) {
        assert!((x / y - 1.0).abs() < 0.01, "{x} vs {y}");
    }
}

#[test]
fn zero_kernel_is_vacuous() {
    let opts = FioOptions::default();
    let kernel = TorusKernel::synthetic(256, &HS, phase, |_, _| 0.0);
    let field = CovectorField::exact(256, &opts.support, grad);
    let rep = order_test(&kernel, &field, &opts).unwrap();
    assert!(rep.vacuous && rep.pass);
}

#[test]
fn too_few_h_values_are_refused() {
    let (kernel, field, opts) = synthetic_setup(256, &HS[..3]);
    assert!(matches!(order_test(&kernel, &field, &opts), Err(Error::Domain(_))));
}

#[test]
fn bounded_symbol_is_bounded() {
    // A symbol of modulus at most one stays contractive up to O(h).
    let (kernel, field, opts) = synthetic_setup(256, &HS);
    let rep = order_test(&kernel, &field, &opts).unwrap();
    for (c, p) in rep.norms_control.iter().zip(&rep.norms_plain) {
        assert!(c / p <= 1.05, "{c} vs {p}");
    }
    assert!(l2_norm(&vec![Complex64::new(1.0, 0.0); 64 * 64], 64) - 2.0 * PI < 1e-12);
}

fn oracle_relation(patch: RelationPatch, res: [usize; 2]) -> scatrel::relation::RelationSample {
    let sys = HamiltonianSystem::new(PotentialModel::gaussian(2, 1.0, 1.0, 2.0).unwrap(), 0.5).unwrap();
    sample(&sys, &patch, &res, &SampleOptions::default()).unwrap()
}

#[test]
fn relation_field_vanishes_on_the_exact_kernel() {
    let opts = FioOptions::default();
    let rel = oracle_relation(RelationPatch::planar((-0.45, 0.45), (0.15, 2.2)), [91, 206]);
    let field = CovectorField::from_relation(256, &opts.support, &rel).unwrap();
    let model = PotentialModel::gaussian(2, 1.0, 1.0, 2.0).unwrap();
    let kernel = TorusKernel::from_oracle(&model, 0.5, 256, &HS, &OracleOptions::default()).unwrap();
    let rep = order_test(&kernel, &field, &opts).unwrap();
    assert!(rep.slope_gain >= 0.5, "{rep:?}");
    assert!(rep.slope_control.abs() < 0.1, "{rep:?}");

    // The symbol vanishes at sampled relation points and grows off them.
    let n = 256;
    let xi_inner = field.max_norm() + opts.xi_margin;
    let sym = vanishing_symbol(&field, &opts, xi_inner);
    let v = (2.0 * rel.lambda).sqrt();
    let mut checked = 0;
    for p in &rel.points {
        let (a, b) = (angle(&p.omega), angle(&p.theta));
        let (i, j) = (nearest(n, a), nearest(n, b));
        let chi = opts.support.value(node(n, i), node(n, j));
        if chi < 0.5 {
            continue;
        }
        let xi = [v * dot(&p.z, &[-p.omega[1], p.omega[0]]), -v * dot(&p.w, &[-p.theta[1], p.theta[0]])];
        let on = sym.evaluate(i, j, xi).norm();
        let off = sym.evaluate(i, j, [xi[0] + 0.5, xi[1]]).norm();
        assert!(on <= 0.1 * chi, "{on} at ({a}, {b})");
        assert!(off >= 0.3 * chi, "{off} at ({a}, {b})");
        checked += 1;
    }
    assert!(checked > 100);
}

fn nearest(n: usize, a: f64) -> usize {
    ((a.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64).round() as usize) % n
}

#[test]
fn symbols_respect_their_support() {
    let opts = FioOptions::default();
    let n = 128;
    let field = CovectorField::exact(n, &opts.support, grad);
    let sym = vanishing_symbol(&field, &opts, 2.0);
    let outside = nearest(n, PI);
    assert_eq!(sym.evaluate(outside, outside, [0.3, 0.1]), Complex64::new(0.0, 0.0));
    let inside = (nearest(n, 0.0), nearest(n, 1.4));
    assert_eq!(sym.evaluate(inside.0, inside.1, [sym.xi_support, 0.0]), Complex64::new(0.0, 0.0));
    assert!(sym.evaluate(inside.0, inside.1, [0.0, 0.0]).norm() > 0.1);
    assert_eq!(sym.vanishing_order_on_sr, 1);
    assert_eq!(control_symbol(n, &opts, 2.0).vanishing_order_on_sr, 0);
}

#[test]
fn sparse_relation_is_a_geometry_error() {
    let opts = FioOptions::default();
    let rel = oracle_relation(RelationPatch::planar((-0.05, 0.05), (0.9, 1.0)), [3, 3]);
    let e = CovectorField::from_relation(256, &opts.support, &rel).unwrap_err();
    assert!(matches!(e, Error::Geometry(_)), "{e:?}");
}
