//! Exact quantum scattering amplitude for radial potentials by partial waves.
//!
//! The Schrödinger operator is `-h^2/2 Δ + V` at energy `lambda`, so the
//! radial equation for `u = r^{(n-1)/2} R(r)` reads
//! `u'' = (U(r) + (nu^2 - 1/4)/r^2 - k^2) u` with `U = 2V/h^2`,
//! `k = sqrt(2 lambda)/h`, and `nu = |m|` (`n = 2`) or `nu = l + 1/2` (`n = 3`).
//!
//! Normalization: the stationary state behaves like
//! `e^{i k x.omega} + f(phi) e^{ikr} r^{-(n-1)/2}` at infinity, and
//!
//! * `n = 2`: `f(phi) = e^{-i pi/4} (2 pi k)^{-1/2} sum_m (e^{2i delta_|m|} - 1) e^{i m phi}`,
//! * `n = 3`: `f(phi) = k^{-1} sum_l (2l + 1) e^{i delta_l} sin(delta_l) P_l(cos phi)`.
//!
//! With this convention `|f|^2` is the differential cross-section, whose
//! classical limit is `1/|sigma_hat|`.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::frame::{angle, dot, separation, wrap};
use crate::ode::{OdeSystem, StepControl, Stepper};
use crate::par;
use crate::potential::PotentialModel;
use crate::quad::GaussLegendre;
use crate::special::{bessel_j, bessel_y, derivatives, legendre, OrderFamily};

/// Numerical controls for the partial-wave solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    /// Relative tolerance of the radial integration.
    pub rtol: f64,
    /// Matching starts where `|V| < negligible_fraction * lambda`.
    pub negligible_fraction: f64,
    /// Lower bound on `k R` at the matching radius.
    pub min_kr: f64,
    /// Orders are added until three consecutive `|delta|` fall below this.
    pub tail_threshold: f64,
    /// Amplitudes whose truncation bound exceeds this (relative) carry a warning.
    pub amplitude_tolerance: f64,
    /// Largest admissible matching radius.
    pub max_radius: f64,
    pub max_orders: usize,
    /// Overrides the automatic matching radius.
    pub matching_radius: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-13,
            negligible_fraction: 1e-14,
            min_kr: 30.0,
            tail_threshold: 1e-14,
            amplitude_tolerance: 1e-9,
            max_radius: 1e3,
            max_orders: 20_000,
            matching_radius: None,
        }
    }
}

/// Phase shifts of one radial problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialWaveSolution {
    pub dimension: usize,
    pub lambda: f64,
    pub h: f64,
    pub k: f64,
    /// `delta_l` for `l = 0..=l_max`, reduced to `(-pi/2, pi/2]`.
    pub phase_shifts: Vec<f64>,
    pub l_max: usize,
    pub matching_radius: f64,
    /// Born estimate of `sum_{l > l_max} g_l |delta_l|`, with `g_l` the
    /// multiplicity of the order (2 for `m != 0` in the plane, `2l + 1` in space).
    pub tail_estimate: f64,
    pub amplitude_tolerance: f64,
}

impl PartialWaveSolution {
    pub fn family(&self) -> OrderFamily {
        if self.dimension == 2 {
            OrderFamily::Integer
        } else {
            OrderFamily::HalfInteger
        }
    }

    /// Bound on the amplitude error caused by truncating the series.
    pub fn amplitude_tail_bound(&self) -> f64 {
        match self.dimension {
            2 => 2.0 * self.tail_estimate / (2.0 * PI * self.k).sqrt(),
            _ => self.tail_estimate / self.k,
        }
    }

    /// Amplitude at scattering angle `phi` (signed in the plane, in `[0, pi]` in space).
    pub fn amplitude_at(&self, phi: f64) -> Complex64 {
        let i = Complex64::i();
        match self.dimension {
            2 => {
                let m_max = self.l_max as i64;
                let mut sum = Complex64::new(0.0, 0.0);
                for m in -m_max..=m_max {
                    let d = self.phase_shifts[m.unsigned_abs() as usize];
                    sum += ((2.0 * d * i).exp() - 1.0) * (m as f64 * phi * i).exp();
                }
                (-FRAC_PI_4 * i).exp() / (2.0 * PI * self.k).sqrt() * sum
            }
            _ => {
                let p = legendre(self.l_max + 1, phi.cos());
                let mut sum = Complex64::new(0.0, 0.0);
                for (l, d) in self.phase_shifts.iter().enumerate() {
                    sum += (2 * l + 1) as f64 * (d * i).exp() * d.sin() * p[l];
                }
                sum / self.k
            }
        }
    }

    /// Total cross-section from the phase shifts.
    pub fn cross_section(&self) -> f64 {
        let s: f64 = self
            .phase_shifts
            .iter()
            .enumerate()
            .map(|(l, d)| multiplicity(self.dimension, l) * d.sin().powi(2))
            .sum();
        match self.dimension {
            2 => 4.0 * s / self.k,
            _ => 4.0 * PI * s / (self.k * self.k),
        }
    }
}

fn multiplicity(n: usize, l: usize) -> f64 {
    match (n, l) {
        (2, 0) => 1.0,
        (2, _) => 2.0,
        (_, l) => (2 * l + 1) as f64,
    }
}

/// Oracle amplitude with its truncation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleAmplitude {
    pub value: Complex64,
    pub tail_bound: f64,
    /// False when the truncation bound exceeds the amplitude tolerance.
    pub accurate: bool,
}

/// Scattering angle from `omega` to `theta`: signed for `n = 2`.
pub fn scattering_angle(omega: &[f64], theta: &[f64]) -> f64 {
    if omega.len() == 2 {
        wrap(angle(theta) - angle(omega))
    } else {
        dot(omega, theta).clamp(-1.0, 1.0).acos()
    }
}

/// Amplitude for incoming direction `omega` and outgoing direction `theta`.
pub fn amplitude(solution: &PartialWaveSolution, omega: &[f64], theta: &[f64]) -> Result<OracleAmplitude> {
    if omega.len() != solution.dimension || theta.len() != solution.dimension {
        return Err(Error::Domain("direction dimension does not match the solution".into()));
    }
    if separation(omega, theta) < 1e-12 {
        return Err(Error::DiagonalExcluded);
    }
    let value = solution.amplitude_at(scattering_angle(omega, theta));
    let tail_bound = solution.amplitude_tail_bound();
    Ok(OracleAmplitude {
        value,
        tail_bound,
        accurate: tail_bound <= solution.amplitude_tolerance * (1.0 + value.norm()),
    })
}

fn check_inputs(model: &PotentialModel, lambda: f64, h: f64) -> Result<OrderFamily> {
    if !model.is_radial_about_origin() {
        return Err(Error::Domain("partial waves need a potential centered at the origin".into()));
    }
    if !(lambda > 0.0) || !(h > 0.0) {
        return Err(Error::Domain(format!("need lambda > 0 and h > 0, got {lambda}, {h}")));
    }
    OrderFamily::for_dimension(model.dimension())
}

/// Radius where free solutions are matched.
pub fn matching_radius(model: &PotentialModel, lambda: f64, h: f64, opts: &OracleOptions) -> f64 {
    let k = (2.0 * lambda).sqrt() / h;
    opts.matching_radius.unwrap_or_else(|| {
        let r_v = if model.is_zero() { 0.0 } else { model.negligible_radius(opts.negligible_fraction * lambda) };
        r_v.max(opts.min_kr / k)
    })
}

/// Phase shifts by radial integration matched to Bessel functions. With
/// `lmax = None` the order range grows until the phase shifts are negligible.
pub fn phase_shifts(
    model: &PotentialModel,
    lambda: f64,
    h: f64,
    lmax: Option<usize>,
    opts: &OracleOptions,
) -> Result<PartialWaveSolution> {
    let family = check_inputs(model, lambda, h)?;
    let n = model.dimension();
    let k = (2.0 * lambda).sqrt() / h;
    let r_match = matching_radius(model, lambda, h, opts);
    if r_match > opts.max_radius {
        return Err(Error::OracleBudget(format!(
            "matching radius {r_match:.3e} exceeds the budget {:.3e}",
            opts.max_radius
        )));
    }
    let mut solution = PartialWaveSolution {
        dimension: n,
        lambda,
        h,
        k,
        phase_shifts: Vec::new(),
        l_max: 0,
        matching_radius: r_match,
        tail_estimate: 0.0,
        amplitude_tolerance: opts.amplitude_tolerance,
    };
    if model.is_zero() {
        let count = lmax.unwrap_or(0) + 1;
        solution.phase_shifts = vec![0.0; count];
        solution.l_max = count - 1;
        return Ok(solution);
    }

    let x = k * r_match;
    let radial = Radial { model, k, scale: 2.0 / (h * h), rtol: opts.rtol };
    let mut matcher = Matcher::new(family, x, 64)?;
    let mut deltas: Vec<f64> = Vec::new();
    let floor = (k * model.length_scale()).ceil() as usize;
    loop {
        let start = deltas.len();
        let chunk = match lmax {
            Some(l) => l + 1 - start,
            None => 32,
        };
        if start + chunk > opts.max_orders {
            return Err(Error::OracleBudget(format!("more than {} partial waves needed", opts.max_orders)));
        }
        matcher.ensure(start + chunk + 1)?;
        let new: Vec<Result<f64>> = par::map_range(chunk, |i| {
            let nu = family.base() + (start + i) as f64;
            let (u, up) = radial.solve(nu, r_match)?;
            Ok(matcher.phase_shift(start + i, r_match, u, up))
        });
        for d in new {
            deltas.push(d?);
        }
        if lmax.is_some() {
            break;
        }
        let tail_small = deltas.len() >= 3 && deltas[deltas.len() - 3..].iter().all(|d| d.abs() < opts.tail_threshold);
        if tail_small && deltas.len() > floor {
            // Drop the trailing negligible orders beyond the first of them.
            while deltas.len() > 1 && deltas[deltas.len() - 2].abs() < opts.tail_threshold {
                deltas.pop();
            }
            break;
        }
    }
    solution.l_max = deltas.len() - 1;
    solution.phase_shifts = deltas;
    solution.tail_estimate = born_tail(model, lambda, h, solution.l_max, r_match)?;
    Ok(solution)
}

/// `sum_{l > l_max} g_l |delta_l^Born|` over the next orders until negligible.
fn born_tail(model: &PotentialModel, lambda: f64, h: f64, l_max: usize, radius: f64) -> Result<f64> {
    let extra = 64;
    let born = born_phase_shifts(model, lambda, h, l_max + 1 + extra, radius)?;
    Ok(born
        .iter()
        .enumerate()
        .skip(l_max + 1)
        .map(|(l, d)| multiplicity(model.dimension(), l) * d.abs())
        .sum())
}

/// First Born phase shifts `delta_l = -(pi/2) int_0^R U(r) J_nu(kr)^2 r dr`
/// for `l = 0..count`, by composite Gauss–Legendre quadrature.
pub fn born_phase_shifts(model: &PotentialModel, lambda: f64, h: f64, count: usize, radius: f64) -> Result<Vec<f64>> {
    let family = check_inputs(model, lambda, h)?;
    let k = (2.0 * lambda).sqrt() / h;
    let rule = GaussLegendre::new(16);
    let panels = (k * radius / 2.0).ceil() as usize + 20;
    let width = radius / panels as f64;
    let per_panel: Vec<Result<Vec<f64>>> = par::map_range(panels, |p| {
        let a = p as f64 * width;
        let mut acc = vec![0.0; count];
        for (t, wgt) in rule.nodes().iter().zip(rule.weights()) {
            let r = a + 0.5 * width * (t + 1.0);
            let u = 2.0 * model.profile_value(r) / (h * h);
            let j = bessel_j(family, count, k * r)?;
            for (s, jv) in acc.iter_mut().zip(&j) {
                *s += 0.5 * width * wgt * u * jv * jv * r;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; count];
    for acc in per_panel {
        for (t, a) in total.iter_mut().zip(acc?) {
            *t += a;
        }
    }
    Ok(total.into_iter().map(|s| -0.5 * PI * s).collect())
}

/// First Born amplitude at scattering angle `phi`, from the Fourier
/// transform of `U` at momentum transfer `2k sin(phi/2)`.
pub fn born_amplitude(model: &PotentialModel, lambda: f64, h: f64, phi: f64) -> Result<Complex64> {
    check_inputs(model, lambda, h)?;
    let k = (2.0 * lambda).sqrt() / h;
    let q = 2.0 * k * (0.5 * phi).sin().abs();
    let radius = if model.is_zero() { 1.0 } else { model.negligible_radius(1e-17 * lambda.max(model.max_value().abs())) };
    let u = |r: f64| 2.0 * model.profile_value(r) / (h * h);
    let rule = GaussLegendre::new(16);
    let panels = (q * radius).ceil() as usize + 40;
    match model.dimension() {
        2 => {
            let ft = 2.0 * PI
                * rule.composite(
                    |r| u(r) * bessel_j(OrderFamily::Integer, 1, q * r).map(|j| j[0]).unwrap_or(0.0) * r,
                    0.0,
                    radius,
                    panels,
                );
            Ok(-Complex64::from_polar(1.0, FRAC_PI_4) * ft / (8.0 * PI * k).sqrt())
        }
        _ => {
            let sinc = |x: f64| if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            let ft = 4.0 * PI * rule.composite(|r| u(r) * sinc(q * r) * r * r, 0.0, radius, panels);
            Ok(Complex64::new(-ft / (4.0 * PI), 0.0))
        }
    }
}

/// Optical-theorem comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpticalReport {
    /// `int |f|^2` by angular quadrature.
    pub sigma_quadrature: f64,
    /// Cross-section from the forward amplitude.
    pub sigma_forward: f64,
    /// `|sigma_quadrature - sigma_forward| / sigma_forward`.
    pub identity_defect: f64,
    /// Born estimate of the cross-section missing beyond `l_max`, relative.
    pub tail_defect: f64,
    /// `identity_defect + tail_defect`.
    pub defect: f64,
    /// Whether truncation dominates the defect.
    pub tail_responsible: bool,
}

pub fn optical_check(solution: &PartialWaveSolution) -> OpticalReport {
    let k = solution.k;
    let f0 = solution.amplitude_at(0.0);
    let (sigma_forward, sigma_quadrature) = match solution.dimension {
        2 => {
            let fwd = -(8.0 * PI / k).sqrt() * (Complex64::from_polar(1.0, FRAC_PI_4) * f0).re;
            // The trapezoid rule is exact for trigonometric polynomials of
            // degree below the node count.
            let nodes = 4 * solution.l_max + 8;
            let step = 2.0 * PI / nodes as f64;
            let quad: f64 = (0..nodes).map(|j| solution.amplitude_at(j as f64 * step).norm_sqr()).sum::<f64>() * step;
            (fwd, quad)
        }
        _ => {
            let fwd = 4.0 * PI / k * f0.im;
            let rule = GaussLegendre::new(solution.l_max + 4);
            let quad = 2.0 * PI * rule.integrate(|t| solution.amplitude_at(t.clamp(-1.0, 1.0).acos()).norm_sqr(), -1.0, 1.0);
            (fwd, quad)
        }
    };
    let missing = tail_cross_section(solution);
    let (identity_defect, tail_defect) = if sigma_forward == 0.0 && sigma_quadrature == 0.0 {
        (0.0, 0.0)
    } else {
        let scale = sigma_forward.abs().max(sigma_quadrature.abs());
        ((sigma_quadrature - sigma_forward).abs() / scale, missing / scale)
    };
    OpticalReport {
        sigma_quadrature,
        sigma_forward,
        identity_defect,
        tail_defect,
        defect: identity_defect + tail_defect,
        tail_responsible: tail_defect > identity_defect,
    }
}

/// Cross-section carried by the Born tail beyond `l_max`: with
/// `sin^2 delta <= delta^2` and `|delta_l| <= tail_estimate`, the sum of
/// squares is at most `tail_estimate^2`.
fn tail_cross_section(solution: &PartialWaveSolution) -> f64 {
    let t2 = solution.tail_estimate * solution.tail_estimate;
    match solution.dimension {
        2 => 4.0 * t2 / solution.k,
        _ => 4.0 * PI * t2 / (solution.k * solution.k),
    }
}

/// Bessel data at the matching argument, grown on demand.
struct Matcher {
    family: OrderFamily,
    x: f64,
    j: Vec<f64>,
    y: Vec<f64>,
    jp: Vec<f64>,
    yp: Vec<f64>,
}

impl Matcher {
    fn new(family: OrderFamily, x: f64, count: usize) -> Result<Self> {
        let mut m = Self { family, x, j: vec![], y: vec![], jp: vec![], yp: vec![] };
        m.ensure(count)?;
        Ok(m)
    }

    fn ensure(&mut self, count: usize) -> Result<()> {
        if self.jp.len() >= count {
            return Ok(());
        }
        let c = count.max(2 * self.jp.len());
        self.j = bessel_j(self.family, c + 1, self.x)?;
        self.y = bessel_y(self.family, c + 1, self.x)?;
        self.jp = derivatives(self.family, &self.j, self.x);
        self.yp = derivatives(self.family, &self.y, self.x);
        Ok(())
    }

    /// `delta` from `u = F cos(delta) - G sin(delta)` with `F = sqrt(r) J(kr)`,
    /// `G = sqrt(r) Y(kr)`, given `(u, u')` at `r`.
    fn phase_shift(&self, l: usize, r: f64, u: f64, up: f64) -> f64 {
        let k = self.x / r;
        let sr = r.sqrt();
        let f = sr * self.j[l];
        let fp = 0.5 * self.j[l] / sr + k * sr * self.jp[l];
        let g = sr * self.y[l];
        let gp = 0.5 * self.y[l] / sr + k * sr * self.yp[l];
        let num = fp * u - f * up;
        let den = gp * u - g * up;
        if !den.is_finite() || !num.is_finite() {
            return 0.0;
        }
        let mut d = (num / den).atan();
        if d <= -0.5 * PI {
            d += PI;
        }
        d
    }
}

struct Radial<'a> {
    model: &'a PotentialModel,
    k: f64,
    scale: f64,
    rtol: f64,
}

impl Radial<'_> {
    /// `(u, u')` at `r_end`, up to a common factor.
    fn solve(&self, nu: f64, r_end: f64) -> Result<(f64, f64)> {
        let ctrl = StepControl { rtol: self.rtol, atol: 1e-300, ..StepControl::default() };
        // Near the origin integrate w = u r^{-(nu + 1/2)}, regular with w(0) = 1.
        let r1 = (0.5 * nu / self.k).max(1.0 / self.k).min(r_end);
        let inner = InnerForm { radial: self, nu };
        let mut st = Stepper::new(&inner, 0.0, &[1.0, 0.0], 1.0, ctrl);
        st.advance_to(r1)?;
        let (w, wp) = (st.y()[0], st.y()[1]);
        if w == 0.0 || !w.is_finite() {
            return Err(Error::OracleBudget(format!("regular solution vanished near the origin (nu = {nu})")));
        }
        let gamma = wp / w + (nu + 0.5) / r1;
        let outer = OuterForm { radial: self, nu };
        let mut st = Stepper::new(&outer, r1, &[1.0, gamma], 1.0, ctrl);
        while st.t() < r_end {
            st.step(Some(r_end))?;
            let size = st.y()[0].abs() + st.y()[1].abs() / self.k;
            if size > 1e100 {
                st.rescale(1.0 / size);
            }
        }
        Ok((st.y()[0], st.y()[1]))
    }

    fn u(&self, r: f64) -> f64 {
        self.scale * self.model.profile_value(r)
    }

    fn error_scale(&self, a: &[f64], b: &[f64], ctrl: &StepControl, out: &mut [f64]) {
        let size = |y: &[f64]| y[0].abs().max(y[1].abs() / self.k);
        let s = ctrl.atol + ctrl.rtol * size(a).max(size(b));
        out[0] = s;
        out[1] = s * self.k;
    }
}

struct InnerForm<'a> {
    radial: &'a Radial<'a>,
    nu: f64,
}

impl OdeSystem for InnerForm<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, r: f64, y: &[f64], dy: &mut [f64]) {
        let q = self.radial.k * self.radial.k - self.radial.u(r);
        dy[0] = y[1];
        dy[1] = if r == 0.0 {
            -q * y[0] / (2.0 * self.nu + 2.0)
        } else {
            -(2.0 * self.nu + 1.0) / r * y[1] - q * y[0]
        };
    }

    fn error_scale(&self, a: &[f64], b: &[f64], ctrl: &StepControl, out: &mut [f64]) {
        self.radial.error_scale(a, b, ctrl, out);
    }
}

struct OuterForm<'a> {
    radial: &'a Radial<'a>,
    nu: f64,
}

impl OdeSystem for OuterForm<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, r: f64, y: &[f64], dy: &mut [f64]) {
        let k2 = self.radial.k * self.radial.k;
        dy[0] = y[1];
        dy[1] = (self.radial.u(r) + (self.nu * self.nu - 0.25) / (r * r) - k2) * y[0];
    }

    fn error_scale(&self, a: &[f64], b: &[f64], ctrl: &StepControl, out: &mut [f64]) {
        self.radial.error_scale(a, b, ctrl, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_problem_has_no_phase_shift() {
        let m = PotentialModel::zero(2).unwrap();
        let s = phase_shifts(&m, 0.5, 0.1, Some(10), &OracleOptions::default()).unwrap();
        assert!(s.phase_shifts.iter().all(|d| *d == 0.0));
        assert_eq!(s.amplitude_at(1.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn radial_integration_reproduces_free_waves() {
        // With V = 0 the radial integration itself must reproduce J.
        let m = PotentialModel::gaussian(3, 1e-300, 1.0, 2.0).unwrap();
        let opts = OracleOptions { matching_radius: Some(5.0), ..Default::default() };
        let s = phase_shifts(&m, 0.5, 0.2, Some(20), &opts).unwrap();
        assert!(s.phase_shifts.iter().all(|d| d.abs() < 1e-10), "{:?}", s.phase_shifts);
    }
}
