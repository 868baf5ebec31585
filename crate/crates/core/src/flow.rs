//! Hamiltonian flow of `p(x, xi) = |xi|^2 / 2 + V(x)` with its variational
//! flow and action integrals, plus trapped/non-trapped classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{bracket_root, DenseSegment, OdeSystem, StepControl, Stepper};
use crate::potential::{norm, PotentialModel};

/// Integration tolerances for the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Energy drift budget, relative to `1 + lambda`.
    pub energy: f64,
}

impl Default for FlowTolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            energy: 1e-9,
        }
    }
}

/// The classical system at a fixed energy `lambda`.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    potential: PotentialModel,
    lambda: f64,
    tolerances: FlowTolerances,
    cert_radius: f64,
}

impl HamiltonianSystem {
    pub fn new(potential: PotentialModel, lambda: f64) -> Result<Self> {
        Self::with_tolerances(potential, lambda, FlowTolerances::default())
    }

    pub fn with_tolerances(potential: PotentialModel, lambda: f64, tolerances: FlowTolerances) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("energy must be positive, got {lambda}")));
        }
        if potential.extrapolation() == Some(crate::potential::Extrapolation::Error) {
            return Err(Error::Domain(
                "scattering needs the potential on all of space; use the zero-tail extrapolation".into(),
            ));
        }
        if !(lambda > potential.min_value()) {
            return Err(Error::Domain("energy surface is empty".into()));
        }
        check_principal_type(&potential, lambda)?;
        let cert_radius = certificate_radius(&potential, lambda);
        Ok(Self {
            potential,
            lambda,
            tolerances,
            cert_radius,
        })
    }

    pub fn potential(&self) -> &PotentialModel {
        &self.potential
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Asymptotic speed `sqrt(2 lambda)`.
    pub fn speed(&self) -> f64 {
        (2.0 * self.lambda).sqrt()
    }

    pub fn dimension(&self) -> usize {
        self.potential.dimension()
    }

    pub fn tolerances(&self) -> FlowTolerances {
        self.tolerances
    }

    pub fn set_tolerances(&mut self, tolerances: FlowTolerances) {
        self.tolerances = tolerances;
    }

    /// Radius beyond which outward motion can no longer turn back.
    pub fn certificate_radius(&self) -> f64 {
        self.cert_radius
    }

    pub fn hamiltonian(&self, q: &[f64], p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + self.potential.value_unchecked(q)
    }

    fn step_control(&self) -> StepControl {
        StepControl::with_tolerances(self.tolerances.rtol, self.tolerances.atol)
    }

    fn energy_budget(&self) -> f64 {
        self.tolerances.energy * (1.0 + self.lambda)
    }
}

/// On sampled radii where `V = lambda` (turning points at rest), the gradient
/// must not vanish.
fn check_principal_type(potential: &PotentialModel, lambda: f64) -> Result<()> {
    let scale = potential.length_scale();
    let samples = 20_000;
    let r_max = 40.0 * scale;
    let mut prev = potential.profile_value(0.0) - lambda;
    for i in 1..=samples {
        let r = r_max * i as f64 / samples as f64;
        let cur = potential.profile_value(r) - lambda;
        if prev == 0.0 || prev.signum() != cur.signum() {
            let rr = if prev == 0.0 { r_max * (i - 1) as f64 / samples as f64 } else { r };
            let d = potential.profile_derivative(rr).abs();
            let drop = (prev - cur).abs() * samples as f64 / r_max;
            if d < 1e-12 && drop < 1e-12 {
                return Err(Error::Domain("energy surface has a critical point".into()));
            }
        }
        prev = cur;
    }
    if (potential.profile_value(0.0) - lambda).abs() < 1e-14 {
        return Err(Error::Domain("energy equals the potential at its critical center".into()));
    }
    Ok(())
}

/// Smallest grid radius `R` such that beyond it `d^2|q|^2/dt^2 > 0` on the
/// energy shell: `4(lambda - V) - 2 <q, grad V> >= 4 lambda - 4 sup V - 2 sup |x||grad V|`.
fn certificate_radius(potential: &PotentialModel, lambda: f64) -> f64 {
    if potential.is_zero() {
        return 0.0;
    }
    let ok = |r: f64| {
        let env = potential.envelope_beyond(r);
        lambda - env.value - 0.5 * env.radial_grad > 0.25 * lambda
    };
    let radii = potential.envelope_radii();
    // Conditions are monotone in r because envelopes are suffix suprema.
    let (mut lo, mut hi) = (0usize, radii.len() - 1);
    if ok(radii[0]) {
        return radii[0];
    }
    if !ok(radii[hi]) {
        return radii[hi] * 1.01 + 1.0;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(radii[mid]) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    radii[hi]
}

/// Augmented right-hand side: base flow, optional variational matrix, and the
/// three action integrands.
pub(crate) struct FlowOde<'a> {
    potential: &'a PotentialModel,
    lambda: f64,
    n: usize,
    variational: bool,
}

impl<'a> FlowOde<'a> {
    pub(crate) fn new(system: &'a HamiltonianSystem, variational: bool) -> Self {
        Self {
            potential: &system.potential,
            lambda: system.lambda,
            n: system.dimension(),
            variational,
        }
    }
}

/// Offsets into the augmented state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub variational: bool,
}

impl Layout {
    pub fn dim(&self) -> usize {
        2 * self.n + if self.variational { 4 * self.n * self.n } else { 0 } + 3
    }
    pub fn q(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    pub fn p(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }
    pub fn m(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n;
        s..s + if self.variational { 4 * self.n * self.n } else { 0 }
    }
    /// Integrals of `|p|^2/2 - V - lambda`, `-2V` and `|p|^2/2 - V`.
    pub fn integrals(&self) -> std::ops::Range<usize> {
        let s = self.m().end;
        s..s + 3
    }
}

impl OdeSystem for FlowOde<'_> {
    fn dim(&self) -> usize {
        Layout { n: self.n, variational: self.variational }.dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let lay = Layout { n, variational: self.variational };
        let mut g = [0.0f64; 8];
        let mut h = [0.0f64; 64];
        let v = if self.variational {
            self.potential.eval_all(&y[..n], &mut g[..n], Some(&mut h[..n * n]))
        } else {
            self.potential.eval_all(&y[..n], &mut g[..n], None)
        };
        let mut kin = 0.0;
        for i in 0..n {
            dy[i] = y[n + i];
            dy[n + i] = -g[i];
            kin += 0.5 * y[n + i] * y[n + i];
        }
        if self.variational {
            let m0 = 2 * n;
            let w = 2 * n;
            // Rows 0..n of M are d q, rows n..2n are d p.
            for r in 0..n {
                for c in 0..w {
                    dy[m0 + r * w + c] = y[m0 + (n + r) * w + c];
                }
            }
            for r in 0..n {
                for c in 0..w {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += h[r * n + k] * y[m0 + k * w + c];
                    }
                    dy[m0 + (n + r) * w + c] = -acc;
                }
            }
        }
        let ii = lay.integrals().start;
        dy[ii] = kin - v - self.lambda;
        dy[ii + 1] = -2.0 * v;
        dy[ii + 2] = kin - v;
    }
}

/// A computed phase-space curve with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    layout: Layout,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    segments: Vec<DenseSegment>,
    energy_errors: Vec<f64>,
    accumulated_error: Vec<f64>,
    lambda: f64,
}

impl Trajectory {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dimension(&self) -> usize {
        self.layout.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn q(&self, i: usize) -> &[f64] {
        &self.states[i][self.layout.q()]
    }

    pub fn p(&self, i: usize) -> &[f64] {
        &self.states[i][self.layout.p()]
    }

    /// Row-major `2n x 2n` derivative of the flow with respect to the initial state.
    pub fn variational(&self, i: usize) -> Option<&[f64]> {
        self.layout.variational.then(|| &self.states[i][self.layout.m()])
    }

    pub fn integrals(&self, i: usize) -> [f64; 3] {
        let r = self.layout.integrals();
        [self.states[i][r.start], self.states[i][r.start + 1], self.states[i][r.start + 2]]
    }

    /// `p(q, p) - lambda` at sample `i`.
    pub fn energy_error(&self, i: usize) -> f64 {
        self.energy_errors[i]
    }

    /// Largest change of `p(q, p)` from its initial value over the stored samples.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy_errors[0];
        self.energy_errors.iter().fold(0.0, |a, e| a.max((e - e0).abs()))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn segments(&self) -> &[DenseSegment] {
        &self.segments
    }

    /// Per-component sum of local error estimates.
    pub fn accumulated_error(&self) -> &[f64] {
        &self.accumulated_error
    }

    /// Dense-output state at time `t` within the integrated span.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let (lo, hi) = (self.start_time().min(self.end_time()), self.start_time().max(self.end_time()));
        if self.segments.is_empty() || t <= lo && t == self.start_time() {
            return self.states[0].clone();
        }
        let t = t.clamp(lo, hi);
        let forward = self.end_time() >= self.start_time();
        let idx = self.segments.partition_point(|s| {
            if forward {
                s.t1() < t
            } else {
                s.t1() > t
            }
        });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval(t)
    }

    /// Dense output at the requested sample times.
    pub fn sample(&self, times: &[f64]) -> Vec<Vec<f64>> {
        times.iter().map(|&t| self.state_at(t)).collect()
    }
}

/// Whether a driver should keep stepping.
pub(crate) enum Control {
    Continue,
    /// Stop at the given time inside the latest segment.
    StopAt(f64),
}

/// Integrates the augmented system step by step, calling `on_step` after each
/// accepted step with the segment and the end state.
pub(crate) fn drive<F>(
    system: &HamiltonianSystem,
    y0: Vec<f64>,
    t0: f64,
    t_end: f64,
    variational: bool,
    mut on_step: F,
) -> Result<Trajectory>
where
    F: FnMut(&DenseSegment, &[f64]) -> Control,
{
    let ode = FlowOde::new(system, variational);
    let layout = Layout { n: system.dimension(), variational };
    assert_eq!(y0.len(), layout.dim());
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut stepper = Stepper::new(&ode, t0, &y0, dir, system.step_control());
    let budget = system.energy_budget();
    let e0 = system.hamiltonian(&y0[layout.q()], &y0[layout.p()]) - system.lambda;
    let mut traj = Trajectory {
        layout,
        times: vec![t0],
        states: vec![y0],
        segments: Vec::new(),
        energy_errors: vec![e0],
        accumulated_error: vec![],
        lambda: system.lambda,
    };
    while (t_end - stepper.t()) * dir > 0.0 {
        let seg = stepper.step(Some(t_end))?;
        let (t, y) = match on_step(&seg, stepper.y()) {
            Control::Continue => (stepper.t(), stepper.y().to_vec()),
            Control::StopAt(ts) => (ts, seg.eval(ts)),
        };
        let e = system.hamiltonian(&y[layout.q()], &y[layout.p()]) - system.lambda;
        if (e - e0).abs() > 10.0 * budget {
            return Err(Error::RejectedTrajectory {
                drift: (e - e0).abs(),
                limit: 10.0 * budget,
            });
        }
        let stop = t != stepper.t();
        traj.times.push(t);
        traj.states.push(y);
        traj.energy_errors.push(e);
        traj.segments.push(seg);
        if stop {
            break;
        }
    }
    traj.accumulated_error = stepper.accumulated_error().to_vec();
    Ok(traj)
}

/// Builds the augmented initial state (identity variational matrix, zero integrals).
pub(crate) fn initial_state(q: &[f64], p: &[f64], variational: bool) -> Vec<f64> {
    let n = q.len();
    let layout = Layout { n, variational };
    let mut y = vec![0.0; layout.dim()];
    y[layout.q()].copy_from_slice(q);
    y[layout.p()].copy_from_slice(p);
    if variational {
        let m0 = layout.m().start;
        for i in 0..2 * n {
            y[m0 + i * 2 * n + i] = 1.0;
        }
    }
    y
}

/// Integration options for [`integrate`].
#[derive(Debug, Clone, Default)]
pub struct IntegrateOptions {
    pub variational: bool,
}

/// Integrates from `t_span.0` to `t_span.1` (either direction).
pub fn integrate(
    system: &HamiltonianSystem,
    q0: &[f64],
    p0: &[f64],
    t_span: (f64, f64),
    options: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = system.dimension();
    if q0.len() != n || p0.len() != n {
        return Err(Error::Domain("initial state has the wrong dimension".into()));
    }
    if q0.iter().chain(p0).any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state must be finite".into()));
    }
    if !(t_span.0.is_finite() && t_span.1.is_finite()) || t_span.0 == t_span.1 {
        return Err(Error::Domain("time span must be finite and nondegenerate".into()));
    }
    drive(
        system,
        initial_state(q0, p0, options.variational),
        t_span.0,
        t_span.1,
        options.variational,
        |_, _| Control::Continue,
    )
}

/// Result of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum Classification {
    /// `|q(s)| > r` for all `|s| > t_escape`; per-direction times included.
    NonTrapped {
        t_escape: f64,
        forward: f64,
        backward: f64,
    },
    Trapped,
    Undecided,
}

impl Classification {
    pub fn is_non_trapped(&self) -> bool {
        matches!(self, Classification::NonTrapped { .. })
    }
}

enum DirectionOutcome {
    Escaped(f64),
    Trapped,
    Undecided,
}

/// Decides whether the trajectory through `(q0, p0)` at time 0 leaves the ball
/// of radius `r` for good in both time directions within `t_max`.
pub fn classify(system: &HamiltonianSystem, q0: &[f64], p0: &[f64], r: f64, t_max: f64) -> Classification {
    let fwd = classify_direction(system, q0, p0, r, t_max);
    let bwd = classify_direction(system, q0, p0, r, -t_max);
    match (fwd, bwd) {
        (DirectionOutcome::Escaped(a), DirectionOutcome::Escaped(b)) => Classification::NonTrapped {
            t_escape: a.max(b),
            forward: a,
            backward: b,
        },
        (DirectionOutcome::Trapped, _) | (_, DirectionOutcome::Trapped) => Classification::Trapped,
        _ => Classification::Undecided,
    }
}

fn classify_direction(
    system: &HamiltonianSystem,
    q0: &[f64],
    p0: &[f64],
    r: f64,
    t_max: f64,
) -> DirectionOutcome {
    let n = system.dimension();
    let dir = t_max.signum();
    let radius = r.max(system.certificate_radius());
    let r2 = r * r;
    // Time of the most recent exit from the closed ball of radius r.
    let mut last_inside = if norm(q0) <= r { Some(0.0) } else { None };
    let mut escaped_at = None;
    let mut max_late_radius: f64 = 0.0;
    let result = drive(
        system,
        initial_state(q0, p0, false),
        0.0,
        t_max,
        false,
        |seg, y| {
            let q = &y[..n];
            let p = &y[n..2 * n];
            let rq = norm(q);
            // Refine crossings of |q| = r inside the segment.
            let g = |t: f64| {
                let s = seg.eval(t);
                s[..n].iter().map(|v| v * v).sum::<f64>() - r2
            };
            let subdiv = 8;
            let mut prev_t = seg.t0;
            let mut prev_g = g(prev_t);
            for k in 1..=subdiv {
                let t = seg.t0 + seg.h * k as f64 / subdiv as f64;
                let gt = g(t);
                if gt <= 0.0 {
                    last_inside = Some(t);
                } else if prev_g <= 0.0 {
                    last_inside = Some(bracket_root(g, prev_t, t, 1e-13 * (1.0 + t.abs())));
                }
                prev_t = t;
                prev_g = gt;
            }
            let tt = seg.t1();
            if tt.abs() > 0.5 * t_max.abs() {
                max_late_radius = max_late_radius.max(rq);
            }
            let radial = dir * q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
            if rq > radius && radial > 0.0 {
                escaped_at = Some(tt);
                return Control::StopAt(tt);
            }
            Control::Continue
        },
    );
    if result.is_err() {
        return DirectionOutcome::Undecided;
    }
    if escaped_at.is_some() {
        return DirectionOutcome::Escaped(last_inside.map_or(0.0, |t: f64| t.abs()));
    }
    if max_late_radius <= system.certificate_radius().max(r) {
        DirectionOutcome::Trapped
    } else {
        DirectionOutcome::Undecided
    }
}

/// Time-reversal map `(q, p) -> (q, -p)`.
pub fn reverse(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| -v).collect()
}

/// Radius `r0` of a circular orbit in an attractive radial well with profile
/// `f`, found as a root of `2(lambda - f(r)) - r f'(r)` in `[lo, hi]`, together
/// with the energy used.
pub fn circular_orbit_radius(potential: &PotentialModel, lambda: f64, lo: f64, hi: f64) -> Result<f64> {
    let g = |r: f64| 2.0 * (lambda - potential.profile_value(r)) - r * potential.profile_derivative(r);
    let (ga, gb) = (g(lo), g(hi));
    if ga.signum() == gb.signum() {
        return Err(Error::Domain("no circular orbit in the bracket".into()));
    }
    Ok(bracket_root(g, lo, hi, 1e-15))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss() -> HamiltonianSystem {
        HamiltonianSystem::new(PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn free_flight_is_exact() {
        let sys = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
        let traj = integrate(&sys, &[0.0, 2.0], &[1.0, 0.0], (0.0, 30.0), &IntegrateOptions::default()).unwrap();
        for i in 0..traj.len() {
            let t = traj.times()[i];
            assert!((traj.q(i)[0] - t).abs() < 1e-12);
            assert!((traj.q(i)[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spans_and_states() {
        let sys = gauss();
        let o = IntegrateOptions::default();
        assert!(integrate(&sys, &[0.0, 0.0], &[1.0, 0.0], (1.0, 1.0), &o).is_err());
        assert!(integrate(&sys, &[f64::NAN, 0.0], &[1.0, 0.0], (0.0, 1.0), &o).is_err());
    }

    #[test]
    fn angular_momentum_is_conserved() {
        let sys = gauss();
        let traj = integrate(&sys, &[-10.0, 0.7], &[1.0, 0.0], (0.0, 25.0), &IntegrateOptions::default()).unwrap();
        let l0 = -0.7;
        for i in 0..traj.len() {
            let (q, p) = (traj.q(i), traj.p(i));
            assert!((q[0] * p[1] - q[1] * p[0] - l0).abs() < 1e-9);
        }
    }

    #[test]
    fn certificate_radius_is_modest_for_weak_gaussian() {
        let sys = gauss();
        assert!(sys.certificate_radius() < 3.0);
        let free = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
        assert_eq!(free.certificate_radius(), 0.0);
    }

    #[test]
    fn free_escape_time() {
        let sys = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
        let z = 1.5;
        let r = 5.0;
        match classify(&sys, &[0.0, z], &[1.0, 0.0], r, 100.0) {
            Classification::NonTrapped { t_escape, forward, backward } => {
                let exact = (r * r - z * z).sqrt();
                assert!((t_escape - exact).abs() < 1e-9, "{t_escape} vs {exact}");
                assert!((forward - backward).abs() < 1e-9);
                assert!(t_escape <= r + z);
            }
            c => panic!("unexpected {c:?}"),
        }
    }

    #[test]
    fn circular_orbit_is_trapped() {
        let well = PotentialModel::gaussian(2, -1.0, 1.0, 2.0).unwrap();
        let lambda = 0.1;
        let r0 = circular_orbit_radius(&well, lambda, 2f64.sqrt(), 2.0).unwrap();
        let sys = HamiltonianSystem::new(well.clone(), lambda).unwrap();
        let speed = (2.0 * (lambda - well.profile_value(r0))).sqrt();
        let c = classify(&sys, &[r0, 0.0], &[0.0, speed], 1.0, 200.0);
        assert_eq!(c, Classification::Trapped);
    }
}
