//! Sampled scattering relation and its Lagrangian residual.
//!
//! A relation point pairs incoming data `(omega, z)` with outgoing data
//! `(theta, w)`, `theta = xi_inf` and `w` the part of `x_inf` orthogonal to
//! `theta`. The second factor is stored twisted: the covector kept at `theta`
//! is `-w`. With that convention the relation is Lagrangian for the sum of
//! the canonical forms of the two factors.
//!
//! Both factors are written in chart coordinates of `T*S^{n-1}`: the polar
//! angle and the fiber coordinate `<z, d omega / d angle>` for `n = 2`;
//! stereographic coordinates `u` and fiber components `<z, d x / d u_k>` for
//! `n = 3`. Patches are rectangles in the chart coordinates of the first
//! factor, so a grid point is exactly an incoming pair.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{scatter, AsymptoticOptions};
use crate::error::{Error, Result};
use crate::flow::HamiltonianSystem;
use crate::frame::{angle, dot, separation, unit, wrap, Chart};
use crate::par;

/// Parameter rectangle in the first-factor chart coordinates
/// `(base..., fiber...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPatch {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Stereographic chart of the incoming directions (`n = 3` only).
    #[serde(default = "default_chart")]
    pub chart: Chart,
}

fn default_chart() -> Chart {
    Chart::South
}

impl RelationPatch {
    /// Planar patch: incoming angle in `angle` and impact coordinate in `impact`.
    pub fn planar(angle: (f64, f64), impact: (f64, f64)) -> Self {
        Self {
            lower: vec![angle.0, impact.0],
            upper: vec![angle.1, impact.1],
            chart: Chart::South,
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len() / 2 + 1
    }

    fn validate(&self) -> Result<()> {
        let m = self.lower.len();
        if m != self.upper.len() || !(m == 2 || m == 4) {
            return Err(Error::Domain(format!("patch needs 2 or 4 bounds per side, got {m}")));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Domain("patch bounds must be finite with lower < upper".into()));
        }
        Ok(())
    }
}

/// Whether the outgoing covector is stored as `-w` (the prime operation).
///
/// This is the only place where the twist sign enters.
pub fn twisted_covector(w: &[f64], twist: bool) -> Vec<f64> {
    if twist {
        w.iter().map(|x| -x).collect()
    } else {
        w.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationPoint {
    /// Grid parameters (first-factor chart coordinates).
    pub params: Vec<f64>,
    pub omega: Vec<f64>,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    /// Covector stored at `theta`.
    pub zeta: Vec<f64>,
    pub extraction_error: f64,
    /// `(base_1, fiber_1, base_2, fiber_2)` chart coordinates, each block of
    /// length `n - 1`.
    pub chart_coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSample {
    pub dimension: usize,
    pub lambda: f64,
    pub patch: RelationPatch,
    pub requested_patch: RelationPatch,
    /// Grid points per parameter; points are stored row-major, last index fastest.
    pub resolution: Vec<usize>,
    pub points: Vec<RelationPoint>,
    pub twist_applied: bool,
    /// Chart used for the outgoing directions (`n = 3` only).
    pub outgoing_chart: Chart,
    pub max_extraction_error: f64,
    /// Points with `theta` within `1e-8` of `omega`.
    pub diagonal_points: usize,
    /// Grid points discarded while shrinking the patch.
    pub discarded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleOptions {
    pub asymptotic: AsymptoticOptions,
    /// Fraction of failed grid points above which the patch is rejected.
    pub max_bad_fraction: f64,
    pub twist: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            asymptotic: AsymptoticOptions::default(),
            max_bad_fraction: 0.1,
            twist: true,
        }
    }
}

fn grid_index(idx: &[usize], res: &[usize]) -> usize {
    idx.iter().zip(res).fold(0, |acc, (i, r)| acc * r + i)
}

fn grid_multi(mut flat: usize, res: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; res.len()];
    for k in (0..res.len()).rev() {
        idx[k] = flat % res[k];
        flat /= res[k];
    }
    idx
}

fn grid_params(patch: &RelationPatch, res: &[usize], idx: &[usize]) -> Vec<f64> {
    (0..res.len())
        .map(|k| {
            let t = idx[k] as f64 / (res[k] - 1) as f64;
            patch.lower[k] + t * (patch.upper[k] - patch.lower[k])
        })
        .collect()
}

/// Incoming `(omega, z)` with first-factor chart coordinates `params`.
pub fn incoming_from_params(params: &[f64], chart: Chart) -> (Vec<f64>, Vec<f64>) {
    if params.len() == 2 {
        let omega = unit(params[0]);
        let z = vec![-omega[1] * params[1], omega[0] * params[1]];
        return (omega, z);
    }
    let u = &params[..2];
    let omega = chart.point(u);
    let t = chart.tangents(u);
    // Raise the fiber index with the conformal metric 4 / (1 + |u|^2)^2.
    let d = 1.0 + u[0] * u[0] + u[1] * u[1];
    let g_inv = d * d / 4.0;
    let z = (0..3).map(|j| g_inv * (params[2] * t[0][j] + params[3] * t[1][j])).collect();
    (omega, z)
}

/// Chart coordinates `(base, fiber)` of a covector `v` at the direction `x`.
/// For `n = 2` the angle is taken within `pi` of `angle_ref`.
pub fn factor_coords(x: &[f64], v: &[f64], chart: Chart, angle_ref: f64) -> Vec<f64> {
    if x.len() == 2 {
        let a = angle_ref + wrap(angle(x) - angle_ref);
        let e = [-a.sin(), a.cos()];
        return vec![a, dot(v, &e)];
    }
    let u = chart.coords(x);
    let t = chart.tangents(&u);
    vec![u[0], u[1], dot(v, &t[0]), dot(v, &t[1])]
}

impl RelationPoint {
    /// Assembles a point from its vectors; `angle_refs` fixes the branch of
    /// the planar angles.
    pub fn new(
        params: Vec<f64>,
        (omega, z): (Vec<f64>, Vec<f64>),
        (theta, w): (Vec<f64>, Vec<f64>),
        twist: bool,
        charts: (Chart, Chart),
        angle_refs: (f64, f64),
        extraction_error: f64,
    ) -> Self {
        let zeta = twisted_covector(&w, twist);
        let mut chart_coords = factor_coords(&omega, &z, charts.0, angle_refs.0);
        chart_coords.extend(factor_coords(&theta, &zeta, charts.1, angle_refs.1));
        Self {
            params,
            omega,
            z,
            theta,
            w,
            zeta,
            extraction_error,
            chart_coords,
        }
    }
}

impl RelationSample {
    /// Builds a sample from precomputed points on a grid of shape `resolution`.
    pub fn from_points(
        lambda: f64,
        patch: RelationPatch,
        resolution: Vec<usize>,
        points: Vec<RelationPoint>,
        twist_applied: bool,
        outgoing_chart: Chart,
    ) -> Result<Self> {
        if resolution.iter().product::<usize>() != points.len() {
            return Err(Error::Domain("point count does not match the grid shape".into()));
        }
        let dimension = points.first().map_or(patch.dimension(), |p| p.omega.len());
        let max_extraction_error = points.iter().map(|p| p.extraction_error).fold(0.0, f64::max);
        let diagonal_points = points.iter().filter(|p| separation(&p.omega, &p.theta) < 1e-8).count();
        Ok(Self {
            dimension,
            lambda,
            requested_patch: patch.clone(),
            patch,
            resolution,
            points,
            twist_applied,
            outgoing_chart,
            max_extraction_error,
            diagonal_points,
            discarded: 0,
        })
    }

    /// Rejects samples that touch the diagonal `theta = omega`.
    pub fn require_off_diagonal(&self) -> Result<()> {
        if self.diagonal_points > 0 {
            return Err(Error::DiagonalExcluded);
        }
        Ok(())
    }

    /// Grid step in each parameter.
    pub fn steps(&self) -> Vec<f64> {
        (0..self.resolution.len())
            .map(|k| (self.patch.upper[k] - self.patch.lower[k]) / (self.resolution[k] - 1) as f64)
            .collect()
    }
}

/// Samples the relation on a `resolution` grid over `patch`.
///
/// Grid points whose trajectory has no asymptotic data are trimmed away by
/// shrinking the patch from its faces; more than `max_bad_fraction` of them
/// rejects the patch.
pub fn sample(
    system: &HamiltonianSystem,
    patch: &RelationPatch,
    resolution: &[usize],
    opts: &SampleOptions,
) -> Result<RelationSample> {
    patch.validate()?;
    let n = system.dimension();
    if patch.dimension() != n {
        return Err(Error::Domain(format!("patch is for n = {}, system has n = {n}", patch.dimension())));
    }
    if resolution.len() != patch.lower.len() || resolution.iter().any(|&r| r < 2) {
        return Err(Error::Domain(format!("resolution needs {} entries of at least 2", patch.lower.len())));
    }
    let total: usize = resolution.iter().product();
    let results = par::map_range(total, |flat| {
        let idx = grid_multi(flat, resolution);
        let params = grid_params(patch, resolution, &idx);
        let (omega, z) = incoming_from_params(&params, patch.chart);
        let s = scatter(system, &omega, &z, &opts.asymptotic);
        (params, omega, z, s.map(|s| (s.datum.xi_inf.clone(), s.datum.outgoing_impact(), s.datum.extraction_error)))
    });

    let bad: Vec<bool> = results.iter().map(|r| r.3.is_err()).collect();
    let n_bad = bad.iter().filter(|&&b| b).count();
    if n_bad as f64 > opts.max_bad_fraction * total as f64 {
        return Err(Error::PatchInvalid(format!(
            "{n_bad} of {total} grid points have no asymptotic data (trapped or undecided); bad region {}",
            describe_region(results.iter().zip(&bad).filter(|(_, &b)| b).map(|(r, _)| r.0.as_slice()))
        )));
    }

    let (lo, hi) = trim(&bad, resolution);
    let shape: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| b - a + 1).collect();
    if n_bad > 0 && shape.iter().any(|&s| s < 3) {
        return Err(Error::PatchInvalid(format!(
            "shrinking around {n_bad} failed grid points leaves fewer than 3 points per direction; bad region {}",
            describe_region(results.iter().zip(&bad).filter(|(_, &b)| b).map(|(r, _)| r.0.as_slice()))
        )));
    }
    let mut shrunk = patch.clone();
    for k in 0..shape.len() {
        shrunk.lower[k] = grid_params(patch, resolution, &lo)[k];
        shrunk.upper[k] = grid_params(patch, resolution, &hi)[k];
    }

    let kept: usize = shape.iter().product();
    let center = &results[grid_index(
        &lo.iter().zip(&hi).map(|(a, b)| (a + b) / 2).collect::<Vec<_>>(),
        resolution,
    )];
    let theta_c = center.3.as_ref().map_err(Clone::clone)?.0.clone();
    let out_chart = if n == 3 { Chart::for_point(&theta_c) } else { Chart::South };
    let refs = if n == 2 { (angle(&center.1), angle(&theta_c)) } else { (0.0, 0.0) };

    let mut points = Vec::with_capacity(kept);
    for flat in 0..kept {
        let local = grid_multi(flat, &shape);
        let global: Vec<usize> = local.iter().zip(&lo).map(|(a, b)| a + b).collect();
        let (params, omega, z, res) = &results[grid_index(&global, resolution)];
        let (theta, w, err) = res.as_ref().map_err(Clone::clone)?;
        let mut p = RelationPoint::new(
            params.clone(),
            (omega.clone(), z.clone()),
            (theta.clone(), w.clone()),
            opts.twist,
            (patch.chart, out_chart),
            refs,
            *err,
        );
        if n == 2 {
            // The incoming angle is the grid parameter itself.
            p.chart_coords[0] = params[0];
        }
        points.push(p);
    }
    let mut out = RelationSample::from_points(system.lambda(), shrunk, shape, points, opts.twist, out_chart)?;
    out.requested_patch = patch.clone();
    out.discarded = total - kept;
    Ok(out)
}

fn describe_region<'a>(mut params: impl Iterator<Item = &'a [f64]>) -> String {
    let Some(first) = params.next() else {
        return "(none)".into();
    };
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for p in params {
        for k in 0..p.len() {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let parts: Vec<String> = lo.iter().zip(&hi).map(|(a, b)| format!("[{a:.6}, {b:.6}]")).collect();
    parts.join(" x ")
}

/// Index box left after repeatedly removing the face with the most bad points.
fn trim(bad: &[bool], res: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut lo = vec![0usize; res.len()];
    let mut hi: Vec<usize> = res.iter().map(|r| r - 1).collect();
    loop {
        let mut best: Option<(usize, usize, bool)> = None;
        for k in 0..res.len() {
            if hi[k] <= lo[k] {
                continue;
            }
            for upper in [false, true] {
                let face = if upper { hi[k] } else { lo[k] };
                let count = count_bad(bad, res, &lo, &hi, Some((k, face)));
                if count > 0 && best.map_or(true, |b| count > b.0) {
                    best = Some((count, k, upper));
                }
            }
        }
        match best {
            None => break,
            Some((_, k, upper)) => {
                if upper {
                    hi[k] -= 1;
                } else {
                    lo[k] += 1;
                }
            }
        }
        if count_bad(bad, res, &lo, &hi, None) == 0 {
            break;
        }
    }
    (lo, hi)
}

fn count_bad(bad: &[bool], res: &[usize], lo: &[usize], hi: &[usize], face: Option<(usize, usize)>) -> usize {
    let shape: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| b + 1 - a).collect();
    let total: usize = shape.iter().product();
    (0..total)
        .filter(|&flat| {
            let local = grid_multi(flat, &shape);
            let global: Vec<usize> = local.iter().zip(lo).map(|(a, b)| a + b).collect();
            face.map_or(true, |(k, f)| global[k] == f) && bad[grid_index(&global, res)]
        })
        .count()
}

/// Lagrangian residual of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    /// Max over interior points and parameter pairs of the pulled-back form.
    pub max: f64,
    /// Max of the summed magnitudes of the individual form terms.
    pub scale: f64,
    /// Largest grid step.
    pub step: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        self.max / self.scale
    }
}

/// Pull-back of the sum of canonical forms, `sum dxi ^ dx` over both factors,
/// to the sampled parametrization, by central differences of chart coordinates.
pub fn lagrangian_residual(sample: &RelationSample) -> Result<Residual> {
    let res = &sample.resolution;
    if res.iter().any(|&r| r < 3) {
        return Err(Error::Domain("resolution must be at least 3 in every direction".into()));
    }
    let m = res.len();
    let k = sample.dimension - 1;
    let steps = sample.steps();
    let interior: Vec<usize> = res.iter().map(|r| r - 2).collect();
    let count: usize = interior.iter().product();
    let mut max: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for flat in 0..count {
        let idx: Vec<usize> = grid_multi(flat, &interior).iter().map(|i| i + 1).collect();
        let tangents: Vec<Vec<f64>> = (0..m)
            .map(|dir| {
                let mut a = idx.clone();
                let mut b = idx.clone();
                a[dir] -= 1;
                b[dir] += 1;
                let ya = &sample.points[grid_index(&a, res)].chart_coords;
                let yb = &sample.points[grid_index(&b, res)].chart_coords;
                ya.iter().zip(yb).map(|(x, y)| (y - x) / (2.0 * steps[dir])).collect()
            })
            .collect();
        for t in &tangents {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Geometry(format!("non-finite tangent at grid index {idx:?}")));
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                let (ti, tj) = (&tangents[i], &tangents[j]);
                let nii = dot(ti, ti);
                let njj = dot(tj, tj);
                let nij = dot(ti, tj);
                if nii == 0.0 || njj == 0.0 || nii * njj - nij * nij <= 1e-24 * nii * njj {
                    return Err(Error::Geometry(format!("collapsed tangents at grid index {idx:?}")));
                }
                let (form, mag) = canonical_pairing(ti, tj, k);
                max = max.max(form.abs());
                scale = scale.max(mag);
            }
        }
    }
    Ok(Residual {
        max,
        scale,
        step: steps.iter().copied().fold(0.0, f64::max),
    })
}

/// `(sum over factors and components of dxi(a) dx(b) - dxi(b) dx(a), sum of magnitudes)`.
fn canonical_pairing(a: &[f64], b: &[f64], k: usize) -> (f64, f64) {
    let mut form = 0.0;
    let mut mag = 0.0;
    for factor in 0..2 {
        let base = 2 * k * factor;
        for c in 0..k {
            let (x, xi) = (base + c, base + k + c);
            let t1 = a[xi] * b[x];
            let t2 = b[xi] * a[x];
            form += t1 - t2;
            mag += t1.abs() + t2.abs();
        }
    }
    (form, mag)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub resolution: usize,
    pub step: f64,
    pub residual: f64,
    pub scale: f64,
    pub max_extraction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Residual ratios between consecutive refinements.
    pub ratios: Vec<f64>,
    /// Least-squares slope of log residual against log step.
    pub order: f64,
    /// `residual / step^2` at the finest grid.
    pub constant: f64,
}

/// Residuals over a sequence of uniform resolutions of the same patch.
pub fn convergence_study(
    system: &HamiltonianSystem,
    patch: &RelationPatch,
    resolutions: &[usize],
    opts: &SampleOptions,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::new();
    for &r in resolutions {
        let s = sample(system, patch, &vec![r; patch.lower.len()], opts)?;
        let res = lagrangian_residual(&s)?;
        rows.push(ConvergenceRow {
            resolution: r,
            step: res.step,
            residual: res.max,
            scale: res.scale,
            max_extraction_error: s.max_extraction_error,
        });
    }
    let ratios = rows.windows(2).map(|w| w[0].residual / w[1].residual).collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.step.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.residual.ln()).collect();
    let order = slope(&xs, &ys);
    let last = rows.last().ok_or_else(|| Error::Domain("no resolutions given".into()))?;
    let constant = last.residual / (last.step * last.step);
    Ok(ConvergenceReport {
        rows,
        ratios,
        order,
        constant,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_params_round_trip() {
        let (omega, z) = incoming_from_params(&[0.4, 1.3], Chart::South);
        let c = factor_coords(&omega, &z, Chart::South, 0.0);
        assert!((c[0] - 0.4).abs() < 1e-15 && (c[1] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn spherical_params_round_trip() {
        for chart in [Chart::South, Chart::North] {
            let params = [0.2, -0.5, 0.7, 0.3];
            let (omega, z) = incoming_from_params(&params, chart);
            assert!(dot(&omega, &z).abs() < 1e-14);
            let c = factor_coords(&omega, &z, chart, 0.0);
            for k in 0..4 {
                assert!((c[k] - params[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn trim_removes_a_bad_face() {
        let res = [4, 5];
        let mut bad = vec![false; 20];
        bad[grid_index(&[3, 2], &res)] = true;
        let (lo, hi) = trim(&bad, &res);
        assert_eq!(lo, vec![0, 0]);
        assert_eq!(hi, vec![2, 4]);
    }
}
