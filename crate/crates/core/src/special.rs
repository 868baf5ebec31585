//! Bessel functions of integer and half-integer order.
//!
//! Orders are always a family `nu0 + k`, `k = 0..count`, with `nu0` equal to
//! `0` or `1/2`, evaluated at one argument. `J` comes from Miller's backward
//! recurrence, `Y` from forward recurrence seeded by closed forms
//! (half-integer) or by `Y_0, Y_1` (integer).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::adaptive;

/// Base order of a Bessel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderFamily {
    Integer,
    HalfInteger,
}

impl OrderFamily {
    pub fn base(self) -> f64 {
        match self {
            OrderFamily::Integer => 0.0,
            OrderFamily::HalfInteger => 0.5,
        }
    }

    /// Family used by the partial-wave expansion in dimension `n`.
    pub fn for_dimension(n: usize) -> Result<Self> {
        match n {
            2 => Ok(OrderFamily::Integer),
            3 => Ok(OrderFamily::HalfInteger),
            _ => Err(Error::Domain(format!("partial waves need n = 2 or 3, got {n}"))),
        }
    }
}

const BIG: f64 = 1e250;

/// `J_{nu0 + k}(x)` for `k = 0..count`.
pub fn bessel_j(family: OrderFamily, count: usize, x: f64) -> Result<Vec<f64>> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("Bessel argument must be finite and >= 0, got {x}")));
    }
    let mut out = vec![0.0; count];
    if count == 0 {
        return Ok(out);
    }
    if x == 0.0 {
        if family == OrderFamily::Integer {
            out[0] = 1.0;
        }
        return Ok(out);
    }
    let nu0 = family.base();
    let top = count as f64 + x;
    let start = (top + 20.0 + 6.0 * top.sqrt()).ceil() as usize + 2;

    // Unnormalized values for k = start..0, plus the order nu0 - 1 (k = -1).
    let mut above = 0.0;
    let mut cur = 1e-300;
    let mut norm_sum = 0.0;
    for k in (0..start).rev() {
        // cur holds order nu0 + k + 1 relative to `above` at nu0 + k + 2.
        let nu = nu0 + k as f64 + 1.0;
        let next = 2.0 * nu / x * cur - above;
        above = cur;
        cur = next;
        // cur is now order nu0 + k.
        if k < count {
            out[k] = cur;
        }
        if family == OrderFamily::Integer && k % 2 == 0 {
            norm_sum += if k == 0 { cur } else { 2.0 * cur };
        }
        if cur.abs() > BIG {
            let s = 1.0 / BIG;
            cur *= s;
            above *= s;
            norm_sum *= s;
            for v in out.iter_mut().skip(k) {
                *v *= s;
            }
        }
    }
    let scale = match family {
        OrderFamily::Integer => 1.0 / norm_sum,
        OrderFamily::HalfInteger => {
            // Fit both J_{1/2} and J_{-1/2}, which never vanish together.
            let minus = 2.0 * nu0 / x * cur - above;
            let c = (2.0 / (PI * x)).sqrt();
            let (s, co) = (c * x.sin(), c * x.cos());
            let m = cur.abs().max(minus.abs());
            let (a, b) = (cur / m, minus / m);
            (s * a + co * b) / (a * a + b * b) / m
        }
    };
    for v in &mut out {
        *v *= scale;
    }
    Ok(out)
}

/// `Y_{nu0 + k}(x)` for `k = 0..count`, `x > 0`.
pub fn bessel_y(family: OrderFamily, count: usize, x: f64) -> Result<Vec<f64>> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("Y needs a finite positive argument, got {x}")));
    }
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let (y0, y1, nu0) = match family {
        OrderFamily::Integer => {
            let (a, b) = y01(x);
            (a, b, 0.0)
        }
        OrderFamily::HalfInteger => {
            let c = (2.0 / (PI * x)).sqrt();
            (-c * x.cos(), -c * (x.cos() / x + x.sin()), 0.5)
        }
    };
    out.push(y0);
    if count > 1 {
        out.push(y1);
    }
    for k in 2..count {
        let nu = nu0 + (k - 1) as f64;
        let next = 2.0 * nu / x * out[k - 1] - out[k - 2];
        out.push(next);
        if !next.is_finite() {
            // Orders beyond this overflow; leave them infinite.
            out.resize(count, f64::NEG_INFINITY);
            break;
        }
    }
    Ok(out)
}

/// `(Y_0(x), Y_1(x))`.
pub fn y01(x: f64) -> (f64, f64) {
    if x >= 20.0 {
        (hankel_asymptotic(0.0, x).1, hankel_asymptotic(1.0, x).1)
    } else {
        (y_integral(0, x), y_integral(1, x))
    }
}

/// `(J_nu(x), Y_nu(x))` from the large-argument Hankel expansion, summed
/// until the terms stop decreasing.
pub fn hankel_asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let (mut p, mut q) = (1.0, 0.0);
    let mut term = 1.0f64;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= last || term.abs() < 1e-18 {
            if term.abs() < last {
                add_term(k, term, &mut p, &mut q);
            }
            break;
        }
        last = term.abs();
        add_term(k, term, &mut p, &mut q);
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    let c = (2.0 / (PI * x)).sqrt();
    (c * (p * chi.cos() - q * chi.sin()), c * (p * chi.sin() + q * chi.cos()))
}

fn add_term(k: usize, term: f64, p: &mut f64, q: &mut f64) {
    let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
    if k % 2 == 0 {
        *p += sign * term;
    } else {
        *q += sign * term;
    }
}

/// Integral representation of `Y_n`:
/// `pi Y_n(x) = int_0^pi sin(x sin t - n t) dt - int_0^inf (e^{n t} + (-1)^n e^{-n t}) e^{-x sinh t} dt`.
fn y_integral(n: i32, x: f64) -> f64 {
    let nf = n as f64;
    let tol = 1e-14;
    let (a, _) = adaptive(|t| (x * t.sin() - nf * t).sin(), 0.0, PI, tol);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    // Cut where the integrand is below 1e-18 of its value at 0.
    let mut upper = 1.0f64;
    while x * upper.sinh() - nf * upper < 45.0 {
        upper *= 1.5;
    }
    let (b, _) = adaptive(
        |t| ((nf * t).exp() + sign * (-nf * t).exp()) * (-x * t.sinh()).exp(),
        0.0,
        upper,
        tol,
    );
    (a - b) / PI
}

/// Derivatives `d/dx C_{nu0+k}(x)` from `C'_nu = (nu/x) C_nu - C_{nu+1}`;
/// `values` needs one more order than the result.
pub fn derivatives(family: OrderFamily, values: &[f64], x: f64) -> Vec<f64> {
    let nu0 = family.base();
    (0..values.len().saturating_sub(1))
        .map(|k| (nu0 + k as f64) / x * values[k] - values[k + 1])
        .collect()
}

/// Legendre polynomials `P_0..P_{count-1}` at `t`.
pub fn legendre(count: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(1.0);
    }
    if count > 1 {
        out.push(t);
    }
    for l in 2..count {
        let lf = l as f64;
        let next = ((2.0 * lf - 1.0) * t * out[l - 1] - (lf - 1.0) * out[l - 2]) / lf;
        out.push(next);
    }
    out
}
