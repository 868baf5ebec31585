//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The stepper is exposed step by step so callers can watch for events,
//! renormalize linear systems, or stop on geometric criteria. Every accepted
//! step yields a [`DenseSegment`] carrying the fourth-order continuous
//! extension over that step.

use crate::error::{Error, Result};

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Per-component error scale. The default is the usual mixed
    /// absolute/relative weight.
    fn error_scale(&self, y_old: &[f64], y_new: &[f64], ctrl: &StepControl, out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = ctrl.atol + ctrl.rtol * y_old[i].abs().max(y_new[i].abs());
        }
    }
}

/// Step-size control parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 2_000_000,
        }
    }
}

impl StepControl {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step `[t0, t0 + h]` (h may be negative).
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    dim: usize,
    coeffs: Vec<f64>,
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether `t` lies within the closed step interval.
    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= a && t <= b
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let d = self.dim;
        let c = &self.coeffs;
        for i in 0..d {
            out[i] = c[i]
                + s * (c[d + i] + s1 * (c[2 * d + i] + s * (c[3 * d + i] + s1 * c[4 * d + i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    /// Single component, avoiding a full-state allocation.
    pub fn component(&self, t: f64, i: usize) -> f64 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let d = self.dim;
        let c = &self.coeffs;
        c[i] + s * (c[d + i] + s1 * (c[2 * d + i] + s * (c[3 * d + i] + s1 * c[4 * d + i])))
    }

    /// Multiplies every stored coefficient by `factor` (used by linear systems
    /// that renormalize their state).
    pub fn scale(&mut self, factor: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= factor;
        }
    }
}

/// Stateful adaptive stepper.
pub struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    ctrl: StepControl,
    t: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    dir: f64,
    steps: usize,
    rejected: usize,
    err_sum: Vec<f64>,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
    sc: Vec<f64>,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    /// Starts at `(t0, y0)` integrating in the direction of `direction` (its sign).
    pub fn new(sys: &'a S, t0: f64, y0: &[f64], direction: f64, ctrl: StepControl) -> Self {
        let n = sys.dim();
        assert_eq!(y0.len(), n, "initial state has wrong dimension");
        let dir = if direction < 0.0 { -1.0 } else { 1.0 };
        let mut f = vec![0.0; n];
        sys.rhs(t0, y0, &mut f);
        let mut s = Self {
            sys,
            ctrl,
            t: t0,
            y: y0.to_vec(),
            f,
            h: 0.0,
            dir,
            steps: 0,
            rejected: 0,
            err_sum: vec![0.0; n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            err: vec![0.0; n],
            sc: vec![0.0; n],
        };
        s.h = match ctrl.h_init {
            Some(h) => h.abs().min(ctrl.h_max),
            None => s.initial_step(),
        };
        s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn derivative(&self) -> &[f64] {
        &self.f
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Sum of the absolute local error estimates per component over all
    /// accepted steps; a pragmatic proxy for the global error.
    pub fn accumulated_error(&self) -> &[f64] {
        &self.err_sum
    }

    /// Rescales the current state of a linear homogeneous system.
    pub fn rescale(&mut self, factor: f64) {
        for v in self.y.iter_mut() {
            *v *= factor;
        }
        for v in self.f.iter_mut() {
            *v *= factor;
        }
    }

    fn weighted_norm(&mut self, v_is_err: bool, a: &[f64], b: &[f64]) -> f64 {
        self.sys.error_scale(a, b, &self.ctrl, &mut self.sc);
        let n = self.sc.len();
        let src = if v_is_err { &self.err } else { &self.ytmp };
        let mut acc = 0.0;
        for i in 0..n {
            let r = src[i] / self.sc[i];
            acc += r * r;
        }
        (acc / n as f64).sqrt()
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len();
        let y0 = self.y.clone();
        self.sys.error_scale(&y0, &y0, &self.ctrl, &mut self.sc);
        let (mut d0, mut d1) = (0.0, 0.0);
        for i in 0..n {
            d0 += (y0[i] / self.sc[i]).powi(2);
            d1 += (self.f[i] / self.sc[i]).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.ctrl.h_max);
        for i in 0..n {
            self.ytmp[i] = y0[i] + self.dir * h0 * self.f[i];
        }
        let mut f1 = vec![0.0; n];
        self.sys.rhs(self.t + self.dir * h0, &self.ytmp, &mut f1);
        let mut d2 = 0.0;
        for i in 0..n {
            d2 += ((f1[i] - self.f[i]) / self.sc[i]).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.ctrl.h_max)
    }

    /// Takes one accepted step, never stepping past `t_limit` when given.
    pub fn step(&mut self, t_limit: Option<f64>) -> Result<DenseSegment> {
        let n = self.y.len();
        let mut facmax = 10.0;
        loop {
            if self.steps + self.rejected >= self.ctrl.max_steps {
                return Err(Error::IntegrationFailure {
                    t_last: self.t,
                    reason: "step budget exhausted".into(),
                });
            }
            let mut h = self.h.min(self.ctrl.h_max);
            let mut clipped = false;
            if let Some(tl) = t_limit {
                let remaining = (tl - self.t) * self.dir;
                if remaining <= 0.0 {
                    return Err(Error::IntegrationFailure {
                        t_last: self.t,
                        reason: "step requested at or beyond the limit".into(),
                    });
                }
                if h >= remaining {
                    h = remaining;
                    clipped = true;
                }
            }
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::IntegrationFailure {
                    t_last: self.t,
                    reason: "step size underflow".into(),
                });
            }
            let hs = self.dir * h;
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            k1.copy_from_slice(&self.f);
            for i in 0..n {
                self.ytmp[i] = y[i] + hs * A21 * k1[i];
            }
            self.sys.rhs(t + C2 * hs, &self.ytmp, k2);
            for i in 0..n {
                self.ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            self.sys.rhs(t + C3 * hs, &self.ytmp, k3);
            for i in 0..n {
                self.ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            self.sys.rhs(t + C4 * hs, &self.ytmp, k4);
            for i in 0..n {
                self.ytmp[i] =
                    y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            self.sys.rhs(t + C5 * hs, &self.ytmp, k5);
            for i in 0..n {
                self.ytmp[i] = y[i]
                    + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            self.sys.rhs(t + hs, &self.ytmp, k6);
            for i in 0..n {
                self.ynew[i] = y[i]
                    + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            self.sys.rhs(t + hs, &self.ynew, k7);
            for i in 0..n {
                self.err[i] = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
            }
            let y_old = self.y.clone();
            let ynew = self.ynew.clone();
            let err = self.weighted_norm(true, &y_old, &ynew);
            if !err.is_finite() {
                self.h *= 0.25;
                self.rejected += 1;
                facmax = 1.0;
                continue;
            }
            if err <= 1.0 {
                let [k1, _k2, k3, k4, k5, k6, k7] = &self.k;
                let mut coeffs = vec![0.0; 5 * n];
                for i in 0..n {
                    let dy = self.ynew[i] - self.y[i];
                    let bspl = hs * k1[i] - dy;
                    coeffs[i] = self.y[i];
                    coeffs[n + i] = dy;
                    coeffs[2 * n + i] = bspl;
                    coeffs[3 * n + i] = dy - hs * k7[i] - bspl;
                    coeffs[4 * n + i] = hs
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                for i in 0..n {
                    self.err_sum[i] += self.err[i].abs();
                }
                let seg = DenseSegment {
                    t0: self.t,
                    h: hs,
                    dim: n,
                    coeffs,
                };
                self.t = if clipped { t_limit.unwrap() } else { self.t + hs };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.f.copy_from_slice(&self.k[6]);
                self.steps += 1;
                let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, facmax);
                // A clipped step says nothing about the natural step size.
                if !clipped || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(seg);
            }
            self.rejected += 1;
            facmax = 1.0;
            self.h = h * (0.9 * err.powf(-0.2)).max(0.2);
        }
    }

    /// Integrates to exactly `t_end`, returning the dense segments traversed.
    pub fn advance_to(&mut self, t_end: f64) -> Result<Vec<DenseSegment>> {
        let mut segs = Vec::new();
        while (t_end - self.t) * self.dir > 0.0 {
            segs.push(self.step(Some(t_end))?);
        }
        Ok(segs)
    }
}

/// Locates a root of `g` on `[a, b]` given a sign change, by bisection
/// refined with the secant rule (Illinois variant).
pub fn bracket_root<F: FnMut(f64) -> f64>(mut g: F, a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (g(a), g(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && (c - a) * (c - b) < 0.0 { c } else { 0.5 * (a + b) };
        let fc = g(c);
        if fc == 0.0 || (b - a).abs() < tol {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < tol {
            return 0.5 * (a + b);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -2.0 * t * y[0];
        }
    }

    #[test]
    fn oscillator_endpoint_matches_closed_form() {
        let ctrl = StepControl::with_tolerances(1e-11, 1e-13);
        let mut st = Stepper::new(&Oscillator, 0.0, &[1.0, 0.0], 1.0, ctrl);
        st.advance_to(20.0).unwrap();
        let y = st.y();
        assert!((y[0] - 20f64.cos()).abs() < 1e-9, "{}", y[0] - 20f64.cos());
        assert!((y[1] + 20f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_inside_steps() {
        let ctrl = StepControl::with_tolerances(1e-10, 1e-12);
        let mut st = Stepper::new(&Oscillator, 0.0, &[1.0, 0.0], 1.0, ctrl);
        let segs = st.advance_to(10.0).unwrap();
        let mut worst: f64 = 0.0;
        for seg in &segs {
            for j in 1..8 {
                let t = seg.t0 + seg.h * j as f64 / 8.0;
                let y = seg.eval(t);
                worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs());
            }
        }
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn backward_integration_and_gaussian_decay() {
        let ctrl = StepControl::with_tolerances(1e-11, 1e-14);
        let mut st = Stepper::new(&Decay, 2.0, &[(-4.0f64).exp()], -1.0, ctrl);
        st.advance_to(0.0).unwrap();
        assert!((st.y()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn step_limit_is_hit_exactly() {
        let mut st = Stepper::new(&Oscillator, 0.0, &[1.0, 0.0], 1.0, StepControl::default());
        st.advance_to(std::f64::consts::PI).unwrap();
        assert_eq!(st.t(), std::f64::consts::PI);
    }

    #[test]
    fn bracket_root_finds_cosine_zero() {
        let r = bracket_root(|x| x.cos(), 0.0, 3.0, 1e-14);
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
