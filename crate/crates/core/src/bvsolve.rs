//! Connecting trajectories: all impact parameters `z` with `xi_inf(z) = theta`
//! for a fixed incoming direction `omega`, with their Jacobian factors and
//! path (Maslov) indices.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{determinant, scatter, AsymptoticOptions, Scattering};
use crate::error::{Error, Result};
use crate::flow::HamiltonianSystem;
use crate::frame::{angle, dot, from_frame, perp_frame, separation, to_frame, wrap};
use crate::ode::bracket_root;
use crate::par;
use crate::potential::norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Radius of the seeded ball in `omega^perp`; defaults to four length scales.
    pub search_radius: Option<f64>,
    /// Seeds per unit length.
    pub grid_density: f64,
    /// Residual tolerance on `|xi_inf(z) - theta|`.
    pub tol: f64,
    /// Solutions with `|sigma_hat|` below this are reported as degenerate.
    pub sigma_threshold: f64,
    pub asymptotic: AsymptoticOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            search_radius: None,
            grid_density: 20.0,
            tol: 1e-10,
            sigma_threshold: 1e-8,
            asymptotic: AsymptoticOptions::default(),
        }
    }
}

/// One trajectory connecting `omega` to `theta`.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySolution {
    pub index: usize,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    /// Component of `x_inf` perpendicular to `theta`.
    pub w: Vec<f64>,
    pub x_inf: Vec<f64>,
    pub sigma_hat: f64,
    pub maslov: Option<u32>,
    /// Modified action; filled by the action module.
    pub action: Option<f64>,
    pub condition: f64,
    pub degenerate: bool,
    #[serde(skip)]
    pub scattering: Option<Box<Scattering>>,
}

impl TrajectorySolution {
    /// A solution record without trajectory data, for formula-level use.
    pub fn synthetic(sigma_hat: f64, action: f64, maslov: u32) -> Self {
        Self {
            index: 0,
            omega: vec![],
            theta: vec![],
            z: vec![],
            w: vec![],
            x_inf: vec![],
            sigma_hat,
            maslov: Some(maslov),
            action: Some(action),
            condition: 0.0,
            degenerate: false,
            scattering: None,
        }
    }
}

/// Residual `theta`-frame coordinates of `xi` (the signed angle for `n = 2`).
fn residual(xi: &[f64], theta: &[f64], theta_frame: &[Vec<f64>]) -> Vec<f64> {
    if xi.len() == 2 {
        return vec![wrap(angle(xi) - angle(theta))];
    }
    to_frame(xi, theta_frame)
}

/// Derivative of [`residual`] with respect to the `z` frame coordinates.
fn residual_jacobian(s: &Scattering, theta_frame: &[Vec<f64>]) -> Vec<f64> {
    let k = s.out_frame.len();
    if k == 1 {
        return s.dxi_dz.clone();
    }
    let mut j = vec![0.0; k * k];
    for a in 0..k {
        for c in 0..k {
            // d xi / d z_c = sum_b out_frame[b] dxi_dz[b][c]
            j[a * k + c] = (0..k).map(|b| dot(&theta_frame[a], &s.out_frame[b]) * s.dxi_dz[b * k + c]).sum();
        }
    }
    j
}

fn solve_linear(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    if k == 1 {
        return (a[0] != 0.0).then(|| vec![b[0] / a[0]]);
    }
    let det = determinant(a, k);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    // Cramer's rule; k is at most 2 in supported dimensions.
    let mut x = vec![0.0; k];
    for i in 0..k {
        let mut m = a.to_vec();
        for r in 0..k {
            m[r * k + i] = b[r];
        }
        x[i] = determinant(&m, k) / det;
    }
    Some(x)
}

struct Evaluated {
    coords: Vec<f64>,
    res: Vec<f64>,
    scattering: Scattering,
}

fn evaluate(
    system: &HamiltonianSystem,
    omega: &[f64],
    frame: &[Vec<f64>],
    theta: &[f64],
    theta_frame: &[Vec<f64>],
    coords: &[f64],
    opts: &AsymptoticOptions,
) -> Result<Evaluated> {
    let z = from_frame(coords, frame);
    let scattering = scatter(system, omega, &z, opts)?;
    let res = residual(&scattering.datum.xi_inf, theta, theta_frame);
    Ok(Evaluated {
        coords: coords.to_vec(),
        res,
        scattering,
    })
}

/// Damped Newton iteration from `start`.
fn newton(
    system: &HamiltonianSystem,
    omega: &[f64],
    frame: &[Vec<f64>],
    theta: &[f64],
    theta_frame: &[Vec<f64>],
    start: Evaluated,
    opts: &SolveOptions,
    max_step: f64,
) -> Option<Evaluated> {
    let mut cur = start;
    for _ in 0..60 {
        let rn = norm(&cur.res);
        if rn <= 1e-3 * opts.tol {
            break;
        }
        let j = residual_jacobian(&cur.scattering, theta_frame);
        let neg: Vec<f64> = cur.res.iter().map(|r| -r).collect();
        let mut step = solve_linear(&j, &neg)?;
        let sn = norm(&step);
        if sn > max_step {
            step.iter_mut().for_each(|s| *s *= max_step / sn);
        }
        let mut accepted = None;
        let mut damp = 1.0;
        for _ in 0..12 {
            let trial: Vec<f64> = cur.coords.iter().zip(&step).map(|(c, s)| c + damp * s).collect();
            if let Ok(e) = evaluate(system, omega, frame, theta, theta_frame, &trial, &opts.asymptotic) {
                if norm(&e.res) < rn {
                    accepted = Some(e);
                    break;
                }
            }
            damp *= 0.5;
        }
        match accepted {
            Some(e) => {
                let moved = damp * norm(&step);
                cur = e;
                if moved < 1e-15 * (1.0 + norm(&cur.coords)) {
                    break;
                }
            }
            None => break,
        }
    }
    let cond = dist(&cur.scattering.datum.xi_inf, theta);
    (cond <= opts.tol).then_some(cur)
}

/// Safeguarded Newton–bisection on a sign change of the scalar residual.
fn bracketed(
    system: &HamiltonianSystem,
    omega: &[f64],
    frame: &[Vec<f64>],
    theta: &[f64],
    theta_frame: &[Vec<f64>],
    lo: (f64, f64),
    hi: (f64, f64),
    opts: &SolveOptions,
) -> Option<Evaluated> {
    let f = |c: f64| -> f64 {
        evaluate(system, omega, frame, theta, theta_frame, &[c], &opts.asymptotic)
            .map(|e| e.res[0])
            .unwrap_or(f64::NAN)
    };
    // Illinois brackets to a tight interval, then Newton polishes.
    let root = bracket_root(f, lo.0, hi.0, 1e-13 * (1.0 + lo.0.abs().max(hi.0.abs())));
    let e = evaluate(system, omega, frame, theta, theta_frame, &[root], &opts.asymptotic).ok()?;
    let width = (hi.0 - lo.0).abs();
    let polished = newton(system, omega, frame, theta, theta_frame, e, opts, width)?;
    let c = polished.coords[0];
    (c >= lo.0.min(hi.0) - width && c <= lo.0.max(hi.0) + width).then_some(polished)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn seed_grid(k: usize, radius: f64, density: f64) -> Vec<Vec<f64>> {
    let m = ((radius * density).ceil() as i64).max(1);
    let step = radius / m as f64;
    match k {
        1 => (-m..=m).map(|i| vec![i as f64 * step]).collect(),
        _ => {
            let mut out = Vec::new();
            for i in -m..=m {
                for j in -m..=m {
                    let c = vec![i as f64 * step, j as f64 * step];
                    if norm(&c) <= radius {
                        out.push(c);
                    }
                }
            }
            out
        }
    }
}

/// All connecting trajectories from `omega` to `theta`, sorted by `|z|`.
pub fn find_all(
    system: &HamiltonianSystem,
    omega: &[f64],
    theta: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<TrajectorySolution>> {
    let n = system.dimension();
    if omega.len() != n || theta.len() != n {
        return Err(Error::Domain("directions must match the dimension".into()));
    }
    if (norm(omega) - 1.0).abs() > 1e-10 || (norm(theta) - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("directions must be unit vectors".into()));
    }
    if separation(omega, theta) < 1e-9 {
        return Err(Error::DiagonalExcluded);
    }
    if !(opts.tol > 0.0) || !(opts.grid_density > 0.0) {
        return Err(Error::Domain("tolerance and grid density must be positive".into()));
    }
    let radius = opts
        .search_radius
        .unwrap_or(4.0 * system.potential().length_scale() + norm(system.potential().center()));
    if !(radius > 0.0) {
        return Err(Error::Domain("search radius must be positive".into()));
    }
    let frame = perp_frame(omega);
    let theta_frame = perp_frame(theta);
    let k = n - 1;
    let seeds = seed_grid(k, radius, opts.grid_density);
    let spacing = 1.0 / opts.grid_density;

    let evaluated: Vec<Option<Evaluated>> = par::map(&seeds, |c| {
        match evaluate(system, omega, &frame, theta, &theta_frame, c, &opts.asymptotic) {
            Ok(e) => Some(e),
            Err(err) => {
                warn!("seed {c:?} skipped: {err}");
                None
            }
        }
    });

    let mut candidates: Vec<Evaluated> = Vec::new();
    if k == 1 {
        // Sign changes between neighbouring seeds bracket simple roots.
        let mut brackets = Vec::new();
        for i in 0..evaluated.len().saturating_sub(1) {
            if let (Some(a), Some(b)) = (&evaluated[i], &evaluated[i + 1]) {
                let (ra, rb) = (a.res[0], b.res[0]);
                let near = ra.abs() < 1.0 && rb.abs() < 1.0;
                if near && (ra == 0.0 || ra.signum() != rb.signum()) {
                    brackets.push(((a.coords[0], ra), (b.coords[0], rb)));
                }
            }
        }
        let found: Vec<Option<Evaluated>> = par::map(&brackets, |(lo, hi)| {
            bracketed(system, omega, &frame, theta, &theta_frame, *lo, *hi, opts)
        });
        candidates.extend(found.into_iter().flatten());
        // Local minima of |residual| catch near-tangent roots without a sign change.
        let minima: Vec<usize> = (1..evaluated.len().saturating_sub(1))
            .filter(|&i| match (&evaluated[i - 1], &evaluated[i], &evaluated[i + 1]) {
                (Some(a), Some(b), Some(c)) => {
                    let (ra, rb, rc) = (a.res[0].abs(), b.res[0].abs(), c.res[0].abs());
                    rb <= ra && rb <= rc && a.res[0].signum() == c.res[0].signum()
                }
                _ => false,
            })
            .collect();
        let starts: Vec<Vec<f64>> = minima.iter().map(|&i| seeds[i].clone()).collect();
        let found: Vec<Option<Evaluated>> = par::map(&starts, |c| {
            let e = evaluate(system, omega, &frame, theta, &theta_frame, c, &opts.asymptotic).ok()?;
            newton(system, omega, &frame, theta, &theta_frame, e, opts, spacing)
        });
        candidates.extend(found.into_iter().flatten());
    } else {
        let found: Vec<Option<Evaluated>> = par::map(&seeds, |c| {
            let e = evaluate(system, omega, &frame, theta, &theta_frame, c, &opts.asymptotic).ok()?;
            newton(system, omega, &frame, theta, &theta_frame, e, opts, spacing)
        });
        candidates.extend(found.into_iter().flatten());
    }

    // Deduplicate: keep the smaller residual among roots closer than the
    // z-accuracy implied by the residual tolerance.
    candidates.sort_by(|a, b| norm(&a.res).partial_cmp(&norm(&b.res)).unwrap());
    let mut kept: Vec<Evaluated> = Vec::new();
    for c in candidates {
        let sig = c.scattering.sigma_hat().abs().max(1e-300);
        let radius = 10.0 * opts.tol * (1.0 / sig).max(1.0);
        if kept.iter().all(|k| dist(&k.coords, &c.coords) > radius) {
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| {
        norm(&a.coords)
            .partial_cmp(&norm(&b.coords))
            .unwrap()
            .then(a.coords[0].partial_cmp(&b.coords[0]).unwrap())
    });

    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(index, e)| assemble(index, omega, theta, e.scattering, opts))
        .collect())
}

fn assemble(index: usize, omega: &[f64], theta: &[f64], s: Scattering, opts: &SolveOptions) -> TrajectorySolution {
    let sigma_hat = s.sigma_hat();
    let degenerate = sigma_hat.abs() < opts.sigma_threshold;
    let maslov = if degenerate {
        None
    } else {
        match maslov_index(&s, opts.sigma_threshold) {
            Ok(m) => Some(m),
            Err(err) => {
                warn!("path index unavailable for root {index}: {err}");
                None
            }
        }
    };
    let x_inf = s.datum.x_inf.clone();
    let c = dot(&x_inf, theta);
    let w: Vec<f64> = x_inf.iter().zip(theta).map(|(x, t)| x - c * t).collect();
    TrajectorySolution {
        index,
        omega: omega.to_vec(),
        theta: theta.to_vec(),
        z: s.datum.z.clone(),
        w,
        x_inf,
        sigma_hat,
        maslov,
        action: None,
        condition: dist(&s.datum.xi_inf, theta),
        degenerate: degenerate || maslov.is_none(),
        scattering: Some(Box::new(s)),
    }
}

/// Newton continuation of one branch: the connecting trajectory from `omega`
/// to `theta` nearest to the impact parameter `z_guess`, moving at most
/// `max_step` per iteration.
pub fn track(
    system: &HamiltonianSystem,
    omega: &[f64],
    theta: &[f64],
    z_guess: &[f64],
    max_step: f64,
    opts: &SolveOptions,
) -> Result<TrajectorySolution> {
    if separation(omega, theta) < 1e-9 {
        return Err(Error::DiagonalExcluded);
    }
    let frame = perp_frame(omega);
    let theta_frame = perp_frame(theta);
    let coords = to_frame(z_guess, &frame);
    let start = evaluate(system, omega, &frame, theta, &theta_frame, &coords, &opts.asymptotic)?;
    let e = newton(system, omega, &frame, theta, &theta_frame, start, opts, max_step)
        .ok_or_else(|| Error::Degenerate(format!("branch tracking did not converge from z = {z_guess:?}")))?;
    Ok(assemble(0, omega, theta, e.scattering, opts))
}

/// `det[p, dq/dz_1, ..., dq/dz_{n-1}] / |p|` at an augmented state.
fn focal_determinant(s: &Scattering, state: &[f64]) -> f64 {
    let lay = s.trajectory.layout();
    let p = &state[lay.p()];
    let (dq, _) = s.jacobi(state);
    column_determinant(p, &dq) / norm(p)
}

fn column_determinant(p: &[f64], cols: &[Vec<f64>]) -> f64 {
    let n = p.len();
    let mut m = vec![0.0; n * n];
    for r in 0..n {
        m[r * n] = p[r];
        for (c, col) in cols.iter().enumerate() {
            m[r * n + c + 1] = col[r];
        }
    }
    determinant(&m, n)
}

/// Number of conjugate points along the trajectory: zeros of
/// `t -> det[p, dq/dz]` relative to the incoming plane, including those in
/// the free outgoing tail past the last integrated time.
pub fn maslov_index(s: &Scattering, sigma_threshold: f64) -> Result<u32> {
    if s.sigma_hat().abs() < sigma_threshold {
        return Err(Error::DegenerateEndpoint(s.sigma_hat()));
    }
    let traj = &s.trajectory;
    let mut count = 0u32;
    let sub = 16;
    let mut prev = focal_determinant(s, traj.state(0));
    for seg in traj.segments() {
        let mut t_prev = seg.t0;
        for k in 1..=sub {
            let t = seg.t0 + seg.h * k as f64 / sub as f64;
            let cur = focal_determinant(s, &seg.eval(t));
            if cur == 0.0 || cur.signum() != prev.signum() {
                // Localize to make sure the sign change is genuine.
                let g = |tt: f64| focal_determinant(s, &seg.eval(tt));
                let root = bracket_root(g, t_prev, t, 1e-12 * (1.0 + t.abs()));
                if root.is_finite() {
                    count += 1;
                }
            }
            prev = if cur == 0.0 { -prev } else { cur };
            t_prev = t;
        }
    }
    // Past the end the motion is free: dq/dz(t_end + s) = Q + s P is affine.
    let last = traj.last();
    let lay = traj.layout();
    let p = &last[lay.p()];
    let (q_cols, p_cols) = s.jacobi(last);
    let at = |sv: f64| -> f64 {
        let cols: Vec<Vec<f64>> = q_cols
            .iter()
            .zip(&p_cols)
            .map(|(q, pp)| q.iter().zip(pp).map(|(a, b)| a + sv * b).collect())
            .collect();
        column_determinant(p, &cols)
    };
    count += positive_roots(&at, lay.n - 1);
    Ok(count)
}

/// Number of positive roots of the polynomial of degree `deg <= 2` sampled by `f`.
fn positive_roots(f: &dyn Fn(f64) -> f64, deg: usize) -> u32 {
    let (f0, f1, fm) = (f(0.0), f(1.0), f(-1.0));
    match deg {
        1 => {
            let (a, b) = (f0, f1 - f0);
            u32::from(b != 0.0 && -a / b > 0.0)
        }
        _ => {
            let a = f0;
            let b = 0.5 * (f1 - fm);
            let c = 0.5 * (f1 + fm) - f0;
            if c == 0.0 {
                return u32::from(b != 0.0 && -a / b > 0.0);
            }
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return 0;
            }
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            let roots = [q / c, if q != 0.0 { a / q } else { f64::NAN }];
            roots.iter().filter(|r| r.is_finite() && **r > 0.0).count() as u32
        }
    }
}

/// Whether `theta` is a regular direction for `omega` given its solutions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub regular: bool,
    pub caustic: bool,
    pub min_abs_sigma: f64,
    pub threshold: f64,
    pub count: usize,
}

pub fn nondegeneracy_report(solutions: &[TrajectorySolution], threshold: f64) -> NondegeneracyReport {
    let min_abs_sigma = solutions.iter().map(|s| s.sigma_hat.abs()).fold(f64::INFINITY, f64::min);
    let regular = solutions.iter().all(|s| s.sigma_hat.abs() > threshold);
    NondegeneracyReport {
        regular,
        caustic: !regular,
        min_abs_sigma,
        threshold,
        count: solutions.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_root_counts() {
        assert_eq!(positive_roots(&|s| 1.0 - s, 1), 1);
        assert_eq!(positive_roots(&|s| 1.0 + s, 1), 0);
        assert_eq!(positive_roots(&|s| (s - 1.0) * (s - 2.0), 2), 2);
        assert_eq!(positive_roots(&|s| (s + 1.0) * (s - 2.0), 2), 1);
        assert_eq!(positive_roots(&|s| s * s + 1.0, 2), 0);
    }

    #[test]
    fn report_applies_threshold() {
        let a = TrajectorySolution::synthetic(0.3, 0.0, 0);
        let rep = nondegeneracy_report(&[a.clone()], 1e-8);
        assert!(rep.regular && !rep.caustic);
        let b = TrajectorySolution::synthetic(1e-9, 0.0, 0);
        let rep = nondegeneracy_report(&[a, b], 1e-8);
        assert!(!rep.regular && rep.caustic);
        assert_eq!(rep.min_abs_sigma, 1e-9);
    }
}
