//! Incoming asymptotic conditions and outgoing asymptotic data.
//!
//! A scattering trajectory is labelled by its incoming direction `omega` and
//! impact parameter `z` (perpendicular to `omega`): as `t -> -inf` it follows
//! `sqrt(2 lambda) omega t + z`. Time zero is the moment of closest approach
//! of that free asymptote. Outgoing data `(xi_inf, x_inf)` describe the line
//! `sqrt(2 lambda) xi_inf t + x_inf` approached as `t -> +inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{drive, initial_state, Classification, Control, HamiltonianSystem, Trajectory};
use crate::frame::{dot, perp_frame, to_frame};
use crate::ode::bracket_root;
use crate::par;
use crate::potential::norm;
use crate::quad::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsymptoticOptions {
    /// Residual allowed for the truncated incoming tail.
    pub incoming_tol: f64,
    /// Integration horizon, in units of the crossing time of the extraction radius.
    pub horizon_factor: f64,
}

impl Default for AsymptoticOptions {
    fn default() -> Self {
        Self {
            incoming_tol: 1e-10,
            horizon_factor: 50.0,
        }
    }
}

/// Initial data at `t_start` reproducing the incoming asymptote.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t_start: f64,
    /// Tail corrections `(dq, dp)` added to the free-flight state.
    pub correction: (Vec<f64>, Vec<f64>),
    /// Columns: derivatives of `q` and `p` along each frame vector of `omega^perp`.
    pub dq_dz: Vec<Vec<f64>>,
    pub dp_dz: Vec<Vec<f64>>,
    pub frame: Vec<Vec<f64>>,
}

/// Asymptotic data of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticDatum {
    pub omega: Vec<f64>,
    pub z: Vec<f64>,
    pub xi_inf: Vec<f64>,
    pub x_inf: Vec<f64>,
    pub classification: Classification,
    pub extraction_error: f64,
}

impl AsymptoticDatum {
    /// Component of `x_inf` perpendicular to `xi_inf`.
    pub fn outgoing_impact(&self) -> Vec<f64> {
        let c = dot(&self.x_inf, &self.xi_inf);
        self.x_inf.iter().zip(&self.xi_inf).map(|(x, t)| x - c * t).collect()
    }
}

/// A fully propagated scattering trajectory with first-order sensitivities.
#[derive(Debug, Clone)]
pub struct Scattering {
    pub datum: AsymptoticDatum,
    pub incoming: IncomingState,
    pub trajectory: Trajectory,
    /// Times at which the extraction radii were crossed.
    pub extraction_times: Vec<f64>,
    /// `(n-1) x (n-1)` row-major derivative of `xi_inf` (rows: frame of
    /// `xi_inf^perp`) with respect to `z` (columns: frame of `omega^perp`).
    pub dxi_dz: Vec<f64>,
    /// Columns: derivative of `x_inf` along each frame vector of `omega^perp`.
    pub dx_dz: Vec<Vec<f64>>,
    pub out_frame: Vec<Vec<f64>>,
}

impl Scattering {
    /// Derivatives of `(q, p)` with respect to `z` at an augmented state of
    /// the attached trajectory.
    pub fn jacobi(&self, state: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let lay = self.trajectory.layout();
        jacobi_columns(&state[lay.m()], lay.n, &self.incoming)
    }

    /// Signed Jacobian determinant of `z -> xi_inf`.
    pub fn sigma_hat(&self) -> f64 {
        determinant(&self.dxi_dz, self.incoming.frame.len())
    }
}

fn jacobi_columns(m: &[f64], n: usize, inc: &IncomingState) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let w = 2 * n;
    let mut dq = Vec::with_capacity(inc.dq_dz.len());
    let mut dp = Vec::with_capacity(inc.dq_dz.len());
    for (cq, cp) in inc.dq_dz.iter().zip(&inc.dp_dz) {
        let x: Vec<f64> = cq.iter().chain(cp).copied().collect();
        let mut out = vec![0.0; w];
        for r in 0..w {
            out[r] = (0..w).map(|c| m[r * w + c] * x[c]).sum();
        }
        dq.push(out[..n].to_vec());
        dp.push(out[n..].to_vec());
    }
    (dq, dp)
}

/// Determinant of a small row-major square matrix by Gaussian elimination.
pub fn determinant(a: &[f64], k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => {
            let mut m = a.to_vec();
            let mut det = 1.0;
            for col in 0..k {
                let piv = (col..k)
                    .max_by(|&i, &j| m[i * k + col].abs().partial_cmp(&m[j * k + col].abs()).unwrap())
                    .unwrap();
                if m[piv * k + col] == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for c in 0..k {
                        m.swap(piv * k + c, col * k + c);
                    }
                    det = -det;
                }
                det *= m[col * k + col];
                for r in col + 1..k {
                    let f = m[r * k + col] / m[col * k + col];
                    for c in col..k {
                        m[r * k + c] -= f * m[col * k + c];
                    }
                }
            }
            det
        }
    }
}

pub(crate) fn check_incoming(system: &HamiltonianSystem, omega: &[f64], z: &[f64]) -> Result<()> {
    let n = system.dimension();
    if omega.len() != n || z.len() != n {
        return Err(Error::Domain("direction and impact parameter must match the dimension".into()));
    }
    if omega.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite incoming data".into()));
    }
    if (norm(omega) - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("incoming direction must be a unit vector".into()));
    }
    if dot(omega, z).abs() > 1e-10 * (1.0 + norm(z)) {
        return Err(Error::Domain("impact parameter must be perpendicular to the direction".into()));
    }
    Ok(())
}

/// Radius from which free flight approximates the incoming trajectory to `tol`.
fn start_radius(system: &HamiltonianSystem, tol: f64) -> f64 {
    let pot = system.potential();
    if let Some(s) = pot.support_radius() {
        return s + 0.5;
    }
    let v = system.speed();
    let mut r = pot.length_scale().max(1e-3) + norm(pot.center());
    loop {
        let (bp, bq) = pot.tail_bounds(r, v);
        if bp < tol && bq < tol {
            return r;
        }
        r *= 1.02;
    }
}

/// Initial state at a finite negative time for the trajectory with incoming
/// data `(omega, z)`, including one Picard correction for the potential felt
/// along the free path before `t_start`.
pub fn prepare_incoming(system: &HamiltonianSystem, omega: &[f64], z: &[f64], tol: f64) -> Result<IncomingState> {
    check_incoming(system, omega, z)?;
    if !(tol > 0.0) {
        return Err(Error::Domain("incoming tolerance must be positive".into()));
    }
    let pot = system.potential();
    if !(pot.rho() > 1.0) {
        return Err(Error::UnsupportedDecay { rho: pot.rho() });
    }
    let n = system.dimension();
    let v = system.speed();
    let frame = perp_frame(omega);
    let r_start = start_radius(system, tol);
    let t_start = -r_start / v;

    let mut dq = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut ddq = vec![vec![0.0; n]; n - 1];
    let mut ddp = vec![vec![0.0; n]; n - 1];
    let compact = pot.support_radius().is_some();
    if !pot.is_zero() && !compact {
        // Integrate over u = t_start - s in [0, u_max] along the free line.
        let mut r_far = r_start;
        while pot.tail_bounds(r_far, v).0 > 1e-6 * tol {
            r_far *= 1.1;
        }
        let u_max = (r_far - r_start) / v;
        if u_max > 0.0 {
            let scale = pot.length_scale();
            let panels = ((u_max * v / (0.5 * scale)).ceil() as usize).clamp(1, 4000);
            let rule = GaussLegendre::new(16);
            let h = u_max / panels as f64;
            let mut g = vec![0.0; n];
            let mut hess = vec![0.0; n * n];
            let mut x = vec![0.0; n];
            for k in 0..panels {
                let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for (&node, &weight) in rule.nodes().iter().zip(rule.weights()) {
                    let u = mid + half * node;
                    let w = weight * half;
                    let s = t_start - u;
                    for i in 0..n {
                        x[i] = z[i] + v * omega[i] * s;
                    }
                    pot.eval_all(&x, &mut g, Some(&mut hess));
                    for i in 0..n {
                        dp[i] -= w * g[i];
                        dq[i] -= w * u * g[i];
                    }
                    for (c, e) in frame.iter().enumerate() {
                        for i in 0..n {
                            let he: f64 = (0..n).map(|j| hess[i * n + j] * e[j]).sum();
                            ddp[c][i] -= w * he;
                            ddq[c][i] -= w * u * he;
                        }
                    }
                }
            }
        }
    }
    let q: Vec<f64> = (0..n).map(|i| z[i] + v * omega[i] * t_start + dq[i]).collect();
    let mut p: Vec<f64> = (0..n).map(|i| v * omega[i] + dp[i]).collect();
    let kin = system.lambda() - pot.value_unchecked(&q);
    if !(kin > 0.0) {
        return Err(Error::Domain("incoming start point is outside the energy shell".into()));
    }
    let target = (2.0 * kin).sqrt();
    let scale = target / norm(&p);
    p.iter_mut().for_each(|x| *x *= scale);
    let dq_dz = frame
        .iter()
        .zip(&ddq)
        .map(|(e, d)| e.iter().zip(d).map(|(a, b)| a + b).collect())
        .collect();
    Ok(IncomingState {
        q,
        p,
        t_start,
        correction: (dq, dp),
        dq_dz,
        dp_dz: ddp,
        frame,
    })
}

/// Radii at which outgoing data are read off: one radius for compactly
/// supported potentials (motion is free outside), two for Richardson
/// extrapolation otherwise.
fn extraction_radii(system: &HamiltonianSystem, z: &[f64], r_start: f64) -> (f64, Option<f64>) {
    let pot = system.potential();
    let cert = system.certificate_radius();
    let zn = norm(z);
    if let Some(s) = pot.support_radius() {
        return ((s + 0.25).max(zn + 0.25).max(cert), None);
    }
    let r1 = (20.0 * pot.length_scale().max(1.0))
        .max(2.0 * cert)
        .max(1.1 * r_start)
        .max(1.1 * zn + 1.0);
    (r1, Some(2.0 * r1))
}

/// Propagates the trajectory with incoming data `(omega, z)` until it is
/// certifiably free, and extracts its outgoing data and sensitivities.
pub fn scatter(system: &HamiltonianSystem, omega: &[f64], z: &[f64], opts: &AsymptoticOptions) -> Result<Scattering> {
    let incoming = prepare_incoming(system, omega, z, opts.incoming_tol)?;
    let r_start = norm(&incoming.q);
    let (r1, r2) = extraction_radii(system, z, r_start);
    let r_final = r2.unwrap_or(r1);
    let v = system.speed();
    let n = system.dimension();
    let t_end = incoming.t_start + opts.horizon_factor * (r_final + r_start) / v;
    let rf2 = r_final * r_final;
    let y0 = initial_state(&incoming.q, &incoming.p, true);
    let trajectory = drive(system, y0, incoming.t_start, t_end, true, |seg, y| {
        let g = |t: f64| -> f64 {
            let s = seg.eval(t);
            s[..n].iter().map(|x| x * x).sum::<f64>() - rf2
        };
        let end: f64 = y[..n].iter().map(|x| x * x).sum::<f64>() - rf2;
        if end >= 0.0 && g(seg.t0) < 0.0 {
            return Control::StopAt(bracket_root(g, seg.t0, seg.t1(), 1e-14 * (1.0 + seg.t1().abs())));
        }
        Control::Continue
    })?;
    let last_r = norm(&trajectory.last()[..n]);
    if last_r < r_final * (1.0 - 1e-9) {
        let cert = system.certificate_radius();
        let half = 0.5 * (trajectory.start_time() + trajectory.end_time());
        let late_max = (0..trajectory.len())
            .filter(|&i| trajectory.times()[i] >= half)
            .map(|i| norm(trajectory.q(i)))
            .fold(0.0, f64::max);
        let what = if late_max <= cert.max(1.0) { "trapped" } else { "undecided" };
        return Err(Error::NoAsymptotics(format!(
            "trajectory {what} within the integration horizon (omega = {omega:?}, z = {z:?})"
        )));
    }
    finish(system, omega, z, incoming, trajectory, r1, r2)
}

fn finish(
    system: &HamiltonianSystem,
    omega: &[f64],
    z: &[f64],
    incoming: IncomingState,
    trajectory: Trajectory,
    r1: f64,
    r2: Option<f64>,
) -> Result<Scattering> {
    let n = system.dimension();
    let lay = trajectory.layout();
    let rho = system.potential().rho();
    let mut samples: Vec<(f64, Vec<f64>)> = Vec::new();
    if r2.is_some() {
        let (t1, s1) = crossing(&trajectory, r1)
            .ok_or_else(|| Error::NoAsymptotics("first extraction radius never crossed outward".into()))?;
        samples.push((t1, s1));
    }
    samples.push((trajectory.end_time(), trajectory.last().to_vec()));

    let read = |(t, s): &(f64, Vec<f64>)| {
        let q = &s[lay.q()];
        let p = &s[lay.p()];
        let pn = norm(p);
        let xi: Vec<f64> = p.iter().map(|x| x / pn).collect();
        let x: Vec<f64> = (0..n).map(|i| q[i] - p[i] * t).collect();
        (xi, x, pn)
    };
    let values: Vec<_> = samples.iter().map(read).collect();
    let (xi_last, x_last, _) = values.last().unwrap().clone();
    let (mut xi_inf, x_inf, disc) = if values.len() == 2 {
        let (t1, t2) = (samples[0].0, samples[1].0);
        let xi = richardson(&values[0].0, &values[1].0, t1, t2, rho);
        let x = richardson(&values[0].1, &values[1].1, t1, t2, rho - 1.0);
        let d = dist(&xi, &xi_last) + dist(&x, &x_last);
        (xi, x, d)
    } else {
        (xi_last.clone(), x_last.clone(), 0.0)
    };
    let xn = norm(&xi_inf);
    xi_inf.iter_mut().for_each(|v| *v /= xn);
    let out_frame = perp_frame(&xi_inf);

    // Sensitivities at each extraction time, then extrapolated like the data.
    let k = n - 1;
    let mut jacs = Vec::new();
    let mut dxs = Vec::new();
    for ((t, s), (_, _, pn)) in samples.iter().zip(&values) {
        let (dq, dp) = jacobi_columns(&s[lay.m()], n, &incoming);
        let mut jac = vec![0.0; k * k];
        for a in 0..k {
            for c in 0..k {
                jac[a * k + c] = dot(&out_frame[a], &dp[c]) / pn;
            }
        }
        let dx: Vec<f64> = dq
            .iter()
            .zip(&dp)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y * t).collect::<Vec<_>>())
            .collect();
        jacs.push(jac);
        dxs.push(dx);
    }
    let (dxi_dz, dx_flat) = if samples.len() == 2 {
        let (t1, t2) = (samples[0].0, samples[1].0);
        (
            richardson(&jacs[0], &jacs[1], t1, t2, rho),
            richardson(&dxs[0], &dxs[1], t1, t2, rho - 1.0),
        )
    } else {
        (jacs.pop().unwrap(), dxs.pop().unwrap())
    };
    let dx_dz = dx_flat.chunks(n).map(|c| c.to_vec()).collect();

    let acc = trajectory.accumulated_error();
    let acc_q = acc[lay.q()].iter().fold(0.0f64, |a, v| a.max(*v));
    let acc_p = acc[lay.p()].iter().fold(0.0f64, |a, v| a.max(*v));
    let t_last = trajectory.end_time().abs();
    let v = system.speed();
    let integ = acc_p / v + acc_q + t_last * acc_p;
    let extraction_error = disc + 10.0 * integ + 1e-14 * (1.0 + norm(&x_inf));

    let datum = AsymptoticDatum {
        omega: omega.to_vec(),
        z: z.to_vec(),
        xi_inf,
        x_inf,
        classification: Classification::NonTrapped {
            t_escape: samples[0].0.max(-incoming.t_start),
            forward: samples[0].0,
            backward: -incoming.t_start,
        },
        extraction_error,
    };
    Ok(Scattering {
        datum,
        incoming,
        extraction_times: samples.iter().map(|s| s.0).collect(),
        trajectory,
        dxi_dz,
        dx_dz,
        out_frame,
    })
}

/// Outward crossing of radius `r` after the trajectory's last visit inside it.
fn crossing(traj: &Trajectory, r: f64) -> Option<(f64, Vec<f64>)> {
    let n = traj.dimension();
    let inside = (0..traj.len()).rev().find(|&i| norm(traj.q(i)) < r)?;
    if inside + 1 >= traj.len() {
        return None;
    }
    let seg = &traj.segments()[inside];
    let r2 = r * r;
    let g = |t: f64| -> f64 {
        let s = seg.eval(t);
        s[..n].iter().map(|x| x * x).sum::<f64>() - r2
    };
    let t_hi = traj.times()[inside + 1];
    let t = bracket_root(g, seg.t0, t_hi, 1e-14 * (1.0 + t_hi.abs()));
    Some((t, seg.eval(t)))
}

fn richardson(v1: &[f64], v2: &[f64], t1: f64, t2: f64, kappa: f64) -> Vec<f64> {
    let a = t1.abs().powf(kappa);
    let b = t2.abs().powf(kappa);
    v1.iter().zip(v2).map(|(x, y)| (b * y - a * x) / (b - a)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Outgoing data of a trajectory that has been integrated past the
/// extraction radii (as produced by [`scatter`]).
pub fn extract_outgoing(
    system: &HamiltonianSystem,
    trajectory: &Trajectory,
    incoming: &IncomingState,
    omega: &[f64],
    z: &[f64],
) -> Result<AsymptoticDatum> {
    let n = system.dimension();
    let (r1, r2) = extraction_radii(system, z, norm(&incoming.q));
    let r_final = r2.unwrap_or(r1);
    let last = trajectory.last();
    let radial = dot(&last[..n], &last[n..2 * n]);
    if norm(&last[..n]) < r_final * (1.0 - 1e-9) || radial <= 0.0 {
        return Err(Error::NoAsymptotics("trajectory has not escaped past the extraction radius".into()));
    }
    let s = finish(system, omega, z, incoming.clone(), trajectory.clone(), r1, r2)?;
    Ok(s.datum)
}

/// Derivative of `z -> xi_inf` in the deterministic frames, from the
/// variational flow.
pub fn dxi_dz(system: &HamiltonianSystem, omega: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    Ok(scatter(system, omega, z, &AsymptoticOptions::default())?.dxi_dz)
}

/// Outgoing data for many incoming pairs, in input order.
pub fn sweep(
    system: &HamiltonianSystem,
    inputs: &[(Vec<f64>, Vec<f64>)],
    opts: &AsymptoticOptions,
) -> Vec<Result<AsymptoticDatum>> {
    par::map(inputs, |(omega, z)| scatter(system, omega, z, opts).map(|s| s.datum))
}

/// Impact parameter with frame coordinates `c`.
pub fn impact_from_coords(omega: &[f64], c: &[f64]) -> Vec<f64> {
    crate::frame::from_frame(c, &perp_frame(omega))
}

/// Frame coordinates of an impact parameter.
pub fn impact_coords(omega: &[f64], z: &[f64]) -> Vec<f64> {
    to_frame(z, &perp_frame(omega))
}
