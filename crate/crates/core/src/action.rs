//! Modified actions of connecting trajectories, the WKB phases `Phi_+-` on
//! their characteristic representations, and the leading transport amplitude.
//!
//! Time along a trajectory follows the convention of [`crate::asymptotics`]:
//! the incoming asymptote is `sqrt(2 lambda) omega t + z` with `z ⊥ omega`.
//! Before the first integrated time and after the last one the trajectory is
//! continued by free flight from the end states; the residual force there is
//! below the incoming tolerance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{determinant, scatter, AsymptoticOptions, Scattering};
use crate::bvsolve::{track, SolveOptions, TrajectorySolution};
use crate::error::{Error, Result};
use crate::flow::HamiltonianSystem;
use crate::frame::{dot, from_frame, perp_frame, to_frame};
use crate::ode::bracket_root;
use crate::par;
use crate::potential::norm;
use crate::quad::adaptive;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionOptions {
    /// Inner radius of the shell holding the start point `y`; defaults to
    /// twenty potential length scales.
    pub shell_radius: Option<f64>,
    /// Absolute tolerance of the tail quadratures.
    pub quad_tol: f64,
    pub asymptotic: AsymptoticOptions,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self {
            shell_radius: None,
            quad_tol: 1e-11,
            asymptotic: AsymptoticOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub phi_minus: f64,
    /// Integral of `|x'|^2 / 2 - V` over the segment of duration `t0`.
    pub lagrangian: f64,
    /// `Phi_+` at the segment end, entering with a minus sign.
    pub phi_plus: f64,
    pub lambda_t0: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.phi_minus + self.lagrangian - self.phi_plus + self.lambda_t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionRecord {
    /// Action from the decomposition through the WKB phases.
    pub value: f64,
    pub decomposition: Decomposition,
    /// Single-integral form with integrand `|p|^2/2 - V - lambda`.
    pub alt_value: f64,
    /// Same with the on-shell integrand `-2V`.
    pub alt_value_potential: f64,
    pub t0: f64,
    pub s: f64,
    pub consistency: f64,
    pub quadrature_agreement: f64,
}

/// Free-flight continued view of a propagated trajectory.
struct Ray<'a> {
    s: &'a Scattering,
    system: &'a HamiltonianSystem,
    t_start: f64,
    t_end: f64,
}

impl<'a> Ray<'a> {
    fn new(system: &'a HamiltonianSystem, s: &'a Scattering) -> Self {
        Self {
            s,
            system,
            t_start: s.trajectory.start_time(),
            t_end: s.trajectory.end_time(),
        }
    }

    fn clamp_state(&self, t: f64) -> (Vec<f64>, f64) {
        let tr = &self.s.trajectory;
        if t < self.t_start {
            (tr.state(0).to_vec(), self.t_start)
        } else if t > self.t_end {
            (tr.last().to_vec(), self.t_end)
        } else {
            (tr.state_at(t), t)
        }
    }

    fn qp(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let lay = self.s.trajectory.layout();
        let (y, t_ref) = self.clamp_state(t);
        let p = y[lay.p()].to_vec();
        let q = y[lay.q()].iter().zip(&p).map(|(q, p)| q + p * (t - t_ref)).collect();
        (q, p)
    }

    /// Derivatives of `q` and `p` along the incoming frame directions.
    fn jacobi(&self, t: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (y, t_ref) = self.clamp_state(t);
        let (dq, dp) = self.s.jacobi(&y);
        let dq = dq
            .iter()
            .zip(&dp)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y * (t - t_ref)).collect())
            .collect();
        (dq, dp)
    }

    fn potential_line(&self, t_ref: f64, dir: f64, tol: f64) -> f64 {
        let (q0, p0) = self.qp(t_ref);
        let pot = self.system.potential();
        let f = |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let t = t_ref + dir * u / (1.0 - u);
            let q: Vec<f64> = q0.iter().zip(&p0).map(|(q, p)| q + p * (t - t_ref)).collect();
            -2.0 * pot.value_unchecked(&q) / ((1.0 - u) * (1.0 - u))
        };
        adaptive(f, 0.0, 1.0, tol).0
    }

    fn line_segment(&self, a: f64, b: f64, tol: f64) -> f64 {
        let pot = self.system.potential();
        adaptive(
            |t| {
                let (q, _) = self.qp(t);
                -2.0 * pot.value_unchecked(&q)
            },
            a,
            b,
            tol,
        )
        .0
    }

    fn integral_at(&self, t: f64, k: usize) -> f64 {
        let lay = self.s.trajectory.layout();
        self.s.trajectory.state_at(t)[lay.integrals()][k]
    }

    /// Integral of `|p|^2/2 - V - lambda` from `-inf` to `t` (`k = 0`), or of
    /// the on-shell equivalent `-2V` (`k = 1`).
    fn cumulative(&self, t: f64, k: usize, tol: f64) -> f64 {
        if t <= self.t_start {
            return self.potential_line(t, -1.0, tol);
        }
        let head = self.potential_line(self.t_start, -1.0, tol);
        if t <= self.t_end {
            return head + self.integral_at(t, k);
        }
        head + self.integral_at(self.t_end, k) + self.line_segment(self.t_end, t, tol)
    }

    /// Integral over the whole line.
    fn total(&self, k: usize, tol: f64) -> f64 {
        self.cumulative(self.t_end, k, tol) + self.potential_line(self.t_end, 1.0, tol)
    }

    /// Times on either side of closest approach at which `|q| = r`, found on
    /// the continued ray.
    fn radius_crossings(&self, r: f64) -> Result<(f64, f64)> {
        let n_samples = 4000;
        let span = r / self.system.speed().max(1e-12);
        let (lo, hi) = (self.t_start.min(-2.0 * span), self.t_end.max(2.0 * span));
        let g = |t: f64| norm(&self.qp(t).0) - r;
        let times: Vec<f64> = (0..=n_samples).map(|i| lo + (hi - lo) * i as f64 / n_samples as f64).collect();
        let vals: Vec<f64> = times.iter().map(|&t| g(t)).collect();
        let first = (0..n_samples).find(|&i| vals[i] > 0.0 && vals[i + 1] <= 0.0);
        let last = (0..n_samples).rev().find(|&i| vals[i] <= 0.0 && vals[i + 1] > 0.0);
        match (first, last) {
            (Some(a), Some(b)) => Ok((
                bracket_root(g, times[a], times[a + 1], 1e-13 * (1.0 + times[a].abs())),
                bracket_root(g, times[b], times[b + 1], 1e-13 * (1.0 + times[b].abs())),
            )),
            _ => Err(Error::Region(format!("trajectory never enters the ball of radius {r}"))),
        }
    }
}

fn attached(sol: &TrajectorySolution) -> Result<&Scattering> {
    sol.scattering
        .as_deref()
        .ok_or_else(|| Error::Domain("solution carries no trajectory data".into()))
}

fn require_nondegenerate(sol: &TrajectorySolution, threshold: f64) -> Result<()> {
    if sol.sigma_hat.abs() < threshold {
        return Err(Error::Degenerate(format!(
            "sigma_hat = {:e}: the action is not a generating function here",
            sol.sigma_hat
        )));
    }
    Ok(())
}

/// The single-integral form of the modified action.
pub fn action_value(system: &HamiltonianSystem, sol: &TrajectorySolution, quad_tol: f64) -> Result<f64> {
    let s = attached(sol)?;
    let ray = Ray::new(system, s);
    let v = system.speed();
    Ok(ray.total(0, quad_tol) - v * dot(&s.datum.x_inf, &sol.theta))
}

/// Fills the `action` field of every solution.
pub fn fill_actions(system: &HamiltonianSystem, sols: &mut [TrajectorySolution]) -> Result<()> {
    for sol in sols.iter_mut() {
        sol.action = Some(action_value(system, sol, ActionOptions::default().quad_tol)?);
    }
    Ok(())
}

/// Admissible start times: the inbound passage through the shell
/// `shell_radius < |q| < shell_radius + 1`, as an open interval.
pub fn admissible_s(system: &HamiltonianSystem, sol: &TrajectorySolution, shell_radius: f64) -> Result<(f64, f64)> {
    let s = attached(sol)?;
    let ray = Ray::new(system, s);
    let (outer, _) = ray.radius_crossings(shell_radius + 1.0)?;
    let (inner, _) = ray.radius_crossings(shell_radius)?;
    if !(outer < inner && inner < 0.0) {
        return Err(Error::Region("inbound shell passage not found before closest approach".into()));
    }
    Ok((outer, inner))
}

fn default_shell(system: &HamiltonianSystem, opts: &ActionOptions) -> f64 {
    opts.shell_radius.unwrap_or(20.0 * system.potential().length_scale())
}

/// Modified action by the phase decomposition and by the single-integral
/// form. `s` defaults to the middle of the admissible interval and `t0` to
/// one time unit past the outbound exit from the shell.
pub fn action(
    system: &HamiltonianSystem,
    sol: &TrajectorySolution,
    t0: Option<f64>,
    s: Option<f64>,
    opts: &ActionOptions,
) -> Result<ActionRecord> {
    require_nondegenerate(sol, SolveOptions::default().sigma_threshold)?;
    let sc = attached(sol)?;
    let ray = Ray::new(system, sc);
    let lambda = system.lambda();
    let v = system.speed();
    let shell = default_shell(system, opts);
    let (s_lo, s_hi) = admissible_s(system, sol, shell)?;
    let s = s.unwrap_or(0.5 * (s_lo + s_hi));
    if !(s > s_lo && s < s_hi) {
        return Err(Error::Region(format!("s = {s} outside the inbound shell passage ({s_lo}, {s_hi})")));
    }
    let (_, t_out) = ray.radius_crossings(shell + 1.0)?;
    let t0 = t0.unwrap_or(t_out + 1.0 - s);
    if s + t0 <= t_out {
        return Err(Error::Region(format!("segment end {} is inside the shell", s + t0)));
    }
    let tol = opts.quad_tol;
    let region = PhaseRegion::default();

    let (y, _) = ray.qp(s);
    let xi_in: Vec<f64> = sol.omega.iter().map(|w| v * w).collect();
    let phi_minus = phase_with(system, PhaseSign::Minus, &y, &xi_in, &region, &opts.asymptotic)?.value;
    let (x_end, _) = ray.qp(s + t0);
    let xi_out: Vec<f64> = sol.theta.iter().map(|w| v * w).collect();
    let phi_plus = phase_with(system, PhaseSign::Plus, &x_end, &xi_out, &region, &opts.asymptotic)?.value;
    let lagrangian = ray.cumulative(s + t0, 0, tol) - ray.cumulative(s, 0, tol) + lambda * t0;
    let decomposition = Decomposition {
        phi_minus,
        lagrangian,
        phi_plus,
        lambda_t0: lambda * t0,
    };
    let value = decomposition.total();
    let pairing = v * dot(&sc.datum.x_inf, &sol.theta);
    let alt_value = ray.total(0, tol) - pairing;
    let alt_value_potential = ray.total(1, tol) - pairing;
    Ok(ActionRecord {
        value,
        decomposition,
        alt_value,
        alt_value_potential,
        t0,
        s,
        consistency: (value - alt_value).abs(),
        quadrature_agreement: (alt_value - alt_value_potential).abs(),
    })
}

/// Which of the two WKB phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSign {
    Plus,
    Minus,
}

/// `Gamma_+-(R, d, sigma)`: `|x| > R`, `1/d < |xi| < d` and
/// `cos(x, xi) > sigma` (outgoing) or `cos(x, xi) < -sigma` (incoming).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRegion {
    pub radius: f64,
    pub band: f64,
    pub cosine: f64,
}

impl Default for PhaseRegion {
    fn default() -> Self {
        Self {
            radius: 3.0,
            band: 2.0,
            cosine: 0.5,
        }
    }
}

impl PhaseRegion {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 1.0 && self.band > 1.0 && self.cosine > -1.0 && self.cosine < 1.0) {
            return Err(Error::Region(format!("invalid region parameters {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, sign: PhaseSign, x: &[f64], xi: &[f64]) -> bool {
        let (rx, rxi) = (norm(x), norm(xi));
        if !(rx > self.radius && rxi > 1.0 / self.band && rxi < self.band) {
            return false;
        }
        let c = dot(x, xi) / (rx * rxi);
        match sign {
            PhaseSign::Plus => c > self.cosine,
            PhaseSign::Minus => c < -self.cosine,
        }
    }

    /// Deterministic pseudo-random points of the region with `|x| < outer`.
    pub fn sample(&self, sign: PhaseSign, n: usize, count: usize, outer: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let r = rng.random_range(self.radius..outer);
            let speed = rng.random_range(1.0 / self.band..self.band);
            let dx = random_unit(&mut rng, n);
            let dxi = random_unit(&mut rng, n);
            let x: Vec<f64> = dx.iter().map(|c| r * c).collect();
            let xi: Vec<f64> = dxi.iter().map(|c| speed * c).collect();
            if self.contains(sign, &x, &xi) {
                out.push((x, xi));
            }
        }
        out
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return v.iter().map(|c| c / r).collect();
        }
    }
}

/// A WKB phase evaluated on its characteristic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseValue {
    pub value: f64,
    /// `grad_x Phi`, the momentum of the characteristic at `x`.
    pub gradient: Vec<f64>,
    pub a0: f64,
    /// Time at which the characteristic passes `x`.
    pub tau: f64,
    /// Impact parameter of the characteristic.
    pub impact: Vec<f64>,
}

fn energy_system(system: &HamiltonianSystem, xi: &[f64]) -> Result<HamiltonianSystem> {
    let lam = 0.5 * dot(xi, xi);
    HamiltonianSystem::with_tolerances(system.potential().clone(), lam, system.tolerances())
}

/// `Phi_-(x, xi)` on the incoming characteristic with direction `xi`.
fn phase_minus(system: &HamiltonianSystem, x: &[f64], xi: &[f64], opts: &AsymptoticOptions) -> Result<PhaseValue> {
    let n = x.len();
    let sys = energy_system(system, xi)?;
    let speed = norm(xi);
    let omega: Vec<f64> = xi.iter().map(|c| c / speed).collect();
    let frame = perp_frame(&omega);
    let mut c = to_frame(x, &frame);
    let mut tau = dot(x, &omega) / speed;
    let tol = 1e-12 * (1.0 + norm(x));
    for _ in 0..40 {
        let z = from_frame(&c, &frame);
        let sc = scatter(&sys, &omega, &z, opts)?;
        let ray = Ray::new(&sys, &sc);
        let (q, p) = ray.qp(tau);
        let f: Vec<f64> = q.iter().zip(x).map(|(a, b)| a - b).collect();
        let (dq, _) = ray.jacobi(tau);
        if norm(&f) <= tol {
            let lam = sys.lambda();
            let value = 2.0 * lam * tau + ray.cumulative(tau, 0, 1e-12);
            let mut m = vec![0.0; n * n];
            for r in 0..n {
                m[r * n] = p[r];
                for (k, col) in dq.iter().enumerate() {
                    m[r * n + k + 1] = col[r];
                }
            }
            let det = determinant(&m, n).abs();
            if det == 0.0 {
                return Err(Error::Region(format!("caustic of the incoming family at x = {x:?}")));
            }
            return Ok(PhaseValue {
                value,
                gradient: p,
                a0: (speed / det).sqrt(),
                tau,
                impact: z,
            });
        }
        let mut jac = DMatrix::zeros(n, n);
        for r in 0..n {
            for (k, col) in dq.iter().enumerate() {
                jac[(r, k)] = col[r];
            }
            jac[(r, n - 1)] = p[r];
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let mut step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Region(format!("singular characteristic map at x = {x:?}")))?;
        let sn = step.norm();
        let cap = 1.0 + 0.1 * norm(x);
        if sn > cap {
            step *= cap / sn;
        }
        for k in 0..n - 1 {
            c[k] += step[k];
        }
        tau += step[n - 1];
    }
    Err(Error::Region(format!("characteristic through x = {x:?} not found")))
}

fn phase_with(
    system: &HamiltonianSystem,
    sign: PhaseSign,
    x: &[f64],
    xi: &[f64],
    region: &PhaseRegion,
    opts: &AsymptoticOptions,
) -> Result<PhaseValue> {
    region.validate()?;
    if x.len() != system.dimension() || xi.len() != system.dimension() {
        return Err(Error::Domain("point dimension mismatch".into()));
    }
    if !region.contains(sign, x, xi) {
        return Err(Error::Region(format!("(x, xi) = ({x:?}, {xi:?}) is outside the {sign:?} region")));
    }
    match sign {
        PhaseSign::Minus => phase_minus(system, x, xi, opts),
        PhaseSign::Plus => {
            // Phi_+(x, xi) = -Phi_-(x, -xi) by time reversal.
            let back: Vec<f64> = xi.iter().map(|c| -c).collect();
            let r = phase_minus(system, x, &back, opts)?;
            Ok(PhaseValue {
                value: -r.value,
                gradient: r.gradient.iter().map(|c| -c).collect(),
                a0: r.a0,
                tau: -r.tau,
                impact: r.impact,
            })
        }
    }
}

/// `Phi_+-(x, xi)` with its gradient and transport amplitude.
pub fn phase(system: &HamiltonianSystem, sign: PhaseSign, x: &[f64], xi: &[f64], region: &PhaseRegion) -> Result<PhaseValue> {
    phase_with(system, sign, x, xi, region, &AsymptoticOptions::default())
}

pub fn phi(system: &HamiltonianSystem, sign: PhaseSign, x: &[f64], xi: &[f64], region: &PhaseRegion) -> Result<f64> {
    Ok(phase(system, sign, x, xi, region)?.value)
}

pub fn a0(system: &HamiltonianSystem, sign: PhaseSign, x: &[f64], xi: &[f64], region: &PhaseRegion) -> Result<f64> {
    Ok(phase(system, sign, x, xi, region)?.a0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EikonalReport {
    pub samples: usize,
    /// Max of `| |grad_x Phi|^2/2 + V - |xi|^2/2 |` with a difference gradient.
    pub max_residual: f64,
    /// Max distance between the difference gradient and the characteristic momentum.
    pub max_momentum_mismatch: f64,
    /// Max of `|Phi - <x, xi>|`.
    pub max_offset: f64,
}

/// Eikonal residual on `count` region points with `|x| < 2 R`, using central
/// differences of step `fd_step` in `x`.
pub fn eikonal_check(
    system: &HamiltonianSystem,
    sign: PhaseSign,
    region: &PhaseRegion,
    count: usize,
    fd_step: f64,
    seed: u64,
) -> Result<EikonalReport> {
    let n = system.dimension();
    let pts = region.sample(sign, n, count, 2.0 * region.radius, seed);
    let pot = system.potential();
    // The stencil may step just outside the region near its boundary.
    let relaxed = PhaseRegion {
        radius: region.radius - 2.0 * fd_step,
        cosine: region.cosine - 1e-3,
        ..*region
    };
    let rows: Vec<Result<(f64, f64, f64)>> = par::map(&pts, |(x, xi)| {
        let base = phase(system, sign, x, xi, region)?;
        let mut grad = vec![0.0; n];
        for j in 0..n {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] -= fd_step;
            b[j] += fd_step;
            grad[j] = (phi(system, sign, &b, xi, &relaxed)? - phi(system, sign, &a, xi, &relaxed)?) / (2.0 * fd_step);
        }
        let res = (0.5 * dot(&grad, &grad) + pot.eval(x)? - 0.5 * dot(xi, xi)).abs();
        let mism = grad.iter().zip(&base.gradient).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((res, mism, (base.value - dot(x, xi)).abs()))
    });
    let mut rep = EikonalReport {
        samples: pts.len(),
        max_residual: 0.0,
        max_momentum_mismatch: 0.0,
        max_offset: 0.0,
    };
    for r in rows {
        let (a, b, c) = r?;
        rep.max_residual = rep.max_residual.max(a);
        rep.max_momentum_mismatch = rep.max_momentum_mismatch.max(b);
        rep.max_offset = rep.max_offset.max(c);
    }
    Ok(rep)
}

/// `max |d^2 Phi / dx_j d xi_k - delta_jk|` over `count` region points with
/// `R < |x| < 1.5 R`, by central differences of the characteristic momentum in `xi`.
pub fn mixed_hessian_deviation(
    system: &HamiltonianSystem,
    sign: PhaseSign,
    region: &PhaseRegion,
    count: usize,
    fd_step: f64,
    seed: u64,
) -> Result<f64> {
    let n = system.dimension();
    let pts = region.sample(sign, n, count, 1.5 * region.radius, seed);
    // Differences in xi may leave the region by a hair; widen it for them.
    let relaxed = PhaseRegion {
        radius: region.radius * (1.0 - 1e-6),
        band: region.band * (1.0 + 1e-3),
        cosine: region.cosine - 1e-3,
    };
    let devs: Vec<Result<f64>> = par::map(&pts, |(x, xi)| {
        let mut dev: f64 = 0.0;
        for k in 0..n {
            let mut a = xi.clone();
            let mut b = xi.clone();
            a[k] -= fd_step;
            b[k] += fd_step;
            let ga = phase(system, sign, x, &a, &relaxed)?.gradient;
            let gb = phase(system, sign, x, &b, &relaxed)?.gradient;
            for j in 0..n {
                let d = (gb[j] - ga[j]) / (2.0 * fd_step);
                let delta = if j == k { 1.0 } else { 0.0 };
                dev = dev.max((d - delta).abs());
            }
        }
        Ok(dev)
    });
    devs.into_iter().try_fold(0.0f64, |m, d| Ok(m.max(d?)))
}

/// Tangential part (relative to `theta`) of `grad_xi Phi_+(q(t), v theta)`
/// minus `w`, at the given times along the solution.
pub fn offset_identity(system: &HamiltonianSystem, sol: &TrajectorySolution, times: &[f64], fd_step: f64) -> Result<Vec<f64>> {
    let sc = attached(sol)?;
    let ray = Ray::new(system, sc);
    let v = system.speed();
    let n = system.dimension();
    let region = PhaseRegion::default();
    let relaxed = PhaseRegion {
        cosine: region.cosine - 1e-3,
        ..region
    };
    let xi0: Vec<f64> = sol.theta.iter().map(|c| v * c).collect();
    times
        .iter()
        .map(|&t| {
            let (x, _) = ray.qp(t);
            let mut g = vec![0.0; n];
            for k in 0..n {
                let mut a = xi0.clone();
                let mut b = xi0.clone();
                a[k] -= fd_step;
                b[k] += fd_step;
                g[k] = (phi(system, PhaseSign::Plus, &x, &b, &relaxed)? - phi(system, PhaseSign::Plus, &x, &a, &relaxed)?)
                    / (2.0 * fd_step);
            }
            let along = dot(&g, &sol.theta);
            let tangential: Vec<f64> = g.iter().zip(&sol.theta).map(|(gi, th)| gi - along * th).collect();
            Ok(tangential.iter().zip(&sol.w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Directional derivatives of `f` on the unit sphere at `x` along each
/// vector of `perp_frame(x)`, by central differences on great circles with
/// one Richardson step (`step`, `step / 2`).
pub fn sphere_gradient<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let frame = perp_frame(x);
    let mut out = Vec::with_capacity(frame.len());
    for e in &frame {
        let mut at = |eps: f64| -> Result<f64> {
            let p: Vec<f64> = x.iter().zip(e).map(|(a, b)| eps.cos() * a + eps.sin() * b).collect();
            f(&p)
        };
        let d1 = (at(step)? - at(-step)?) / (2.0 * step);
        let h = 0.5 * step;
        let d2 = (at(h)? - at(-h)?) / (2.0 * h);
        out.push((4.0 * d2 - d1) / 3.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Frame components of `d_omega S` and of `sqrt(2 lambda) z`.
    pub d_omega: Vec<f64>,
    pub expected_omega: Vec<f64>,
    /// Frame components of `d_theta S` and of `-sqrt(2 lambda) w`.
    pub d_theta: Vec<f64>,
    pub expected_theta: Vec<f64>,
    pub mismatch: f64,
}

/// Difference gradients of the action of one branch against the relation
/// data `(z, -w)` of that branch.
pub fn action_gradients(
    system: &HamiltonianSystem,
    sol: &TrajectorySolution,
    fd_step: f64,
    opts: &SolveOptions,
) -> Result<GradientCheck> {
    require_nondegenerate(sol, opts.sigma_threshold)?;
    let v = system.speed();
    let quad_tol = ActionOptions::default().quad_tol;
    let sig = sol.sigma_hat.abs();
    let max_move = 50.0 * fd_step * (1.0 / sig).max(1.0) * (1.0 + norm(&sol.z));
    let branch = |omega: &[f64], theta: &[f64], z_guess: &[f64]| -> Result<(f64, Vec<f64>)> {
        let t = track(system, omega, theta, z_guess, max_move, opts)
            .map_err(|e| Error::StencilInvalid(format!("branch lost at omega = {omega:?}, theta = {theta:?}: {e}")))?;
        let jump = t.z.iter().zip(z_guess).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if jump > max_move {
            return Err(Error::StencilInvalid(format!("impact parameter jumped by {jump:e}")));
        }
        Ok((action_value(system, &t, quad_tol)?, t.z))
    };
    let d_omega = sphere_gradient(&sol.omega, fd_step, |om| {
        let z_guess = rotate_impact(&sol.z, om);
        Ok(branch(om, &sol.theta, &z_guess)?.0)
    })?;
    let d_theta = sphere_gradient(&sol.theta, fd_step, |th| Ok(branch(&sol.omega, th, &sol.z)?.0))?;
    let expected_omega: Vec<f64> = to_frame(&sol.z, &perp_frame(&sol.omega)).iter().map(|c| v * c).collect();
    let expected_theta: Vec<f64> = to_frame(&sol.w, &perp_frame(&sol.theta)).iter().map(|c| -v * c).collect();
    let diff: f64 = d_omega
        .iter()
        .chain(&d_theta)
        .zip(expected_omega.iter().chain(&expected_theta))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(&expected_omega.iter().chain(&expected_theta).copied().collect::<Vec<_>>());
    Ok(GradientCheck {
        d_omega,
        expected_omega,
        d_theta,
        expected_theta,
        mismatch: diff / scale.max(f64::MIN_POSITIVE),
    })
}

/// `z` carried to the perpendicular plane of `to` (projection, keeping length).
fn rotate_impact(z: &[f64], to: &[f64]) -> Vec<f64> {
    let c = dot(z, to);
    let p: Vec<f64> = z.iter().zip(to).map(|(a, b)| a - c * b).collect();
    let (pn, zn) = (norm(&p), norm(z));
    if pn == 0.0 {
        return p;
    }
    p.iter().map(|x| x * zn / pn).collect()
}
