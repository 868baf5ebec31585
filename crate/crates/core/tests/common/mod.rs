#![allow(dead_code)]

/// Classical deflection angle of the Gaussian `V = a exp(-r^2/2)` at energy
/// `lambda` and impact parameter `b > 0`, by quadrature of the orbit equation
/// in `u = 1/r` with the turning-point singularity removed by
/// `u = u0 (1 - s^2)`.
pub fn radial_deflection(a: f64, lambda: f64, b: f64) -> f64 {
    let v = |r: f64| a * (-r * r / 2.0).exp();
    let f = |u: f64| {
        let r = 1.0 / u;
        1.0 - v(r) / lambda - b * b * u * u
    };
    // Turning point: the first zero of f coming in from u = 0.
    let mut hi = 1e-3 / b;
    while f(hi) > 0.0 {
        hi *= 1.05;
    }
    let mut lo = hi / 1.05;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u0 = 0.5 * (lo + hi);
    // Composite midpoint rule on s in [0, 1].
    let nodes = 20_000;
    let mut acc = 0.0;
    for k in 0..nodes {
        let s = (k as f64 + 0.5) / nodes as f64;
        let u = u0 * (1.0 - s * s);
        acc += 2.0 * u0 * s / f(u).sqrt() / nodes as f64;
    }
    std::f64::consts::PI - 2.0 * b * acc
}

/// Root of `g` in `[lo, hi]` by plain bisection.
pub fn bisect(mut g: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let glo = g(lo);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if g(mid).signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximiser of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) > f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}
