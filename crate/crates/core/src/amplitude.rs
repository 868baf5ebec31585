//! Semiclassical scattering amplitude and its comparison with exact data.
//!
//! The leading term is `K(omega, theta; h) = sum_l |sigma_hat_l|^{-1/2}
//! exp(i S_l / h - i mu_l pi / 2)` over the trajectories connecting `omega`
//! to `theta`. Classical data is computed once per direction pair and reused
//! for every `h`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::action::fill_actions;
use crate::bvsolve::{find_all, SolveOptions, TrajectorySolution};
use crate::error::{Error, Result};
use crate::flow::HamiltonianSystem;
use crate::frame::separation;
use crate::oracle::{phase_shifts, scattering_angle, OracleOptions};
use crate::par;
use crate::potential::PotentialModel;
use crate::relation::slope;

/// Default half-width of the masked diagonal band, in radians (10 degrees).
pub const DIAGONAL_BAND: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Status of one `(omega, theta)` entry; exactly one applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryFlag {
    Filled,
    Degenerate,
    Shadow,
    DiagonalMask,
}

impl EntryFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryFlag::Filled => "filled",
            EntryFlag::Degenerate => "degenerate",
            EntryFlag::Shadow => "shadow",
            EntryFlag::DiagonalMask => "diagonal-mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Semiclassical,
    Oracle,
}

/// Normalization attached to a kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub convention: String,
    /// Complex constant the kernel has been multiplied by.
    pub constant: Complex64,
}

impl Normalization {
    fn plain(convention: &str) -> Self {
        Self { convention: convention.into(), constant: Complex64::new(1.0, 0.0) }
    }
}

/// Classical data of one trajectory, independent of `h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub sigma_hat: f64,
    pub action: f64,
    pub maslov: u32,
    pub z: Vec<f64>,
}

impl Branch {
    pub fn from_solution(sol: &TrajectorySolution) -> Result<Self> {
        let action = sol.action.ok_or_else(|| Error::Domain("solution has no action".into()))?;
        let maslov = sol.maslov.ok_or_else(|| Error::Degenerate("solution has no Maslov index".into()))?;
        Ok(Self { sigma_hat: sol.sigma_hat, action, maslov, z: sol.z.clone() })
    }

    pub fn weight(&self) -> f64 {
        self.sigma_hat.abs().powf(-0.5)
    }

    /// `|sigma_hat|^{-1/2} exp(i S/h - i mu pi/2)`.
    pub fn term(&self, h: f64) -> Complex64 {
        Complex64::from_polar(self.weight(), self.action / h - self.maslov as f64 * FRAC_PI_2)
    }
}

/// Leading-order kernel value from a set of branches.
pub fn leading_term(branches: &[Branch], h: f64) -> Complex64 {
    branches.iter().map(|b| b.term(h)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalEntry {
    pub flag: EntryFlag,
    pub branches: Vec<Branch>,
}

/// Classical data on an `(omega, theta)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalCache {
    pub lambda: f64,
    pub omega_grid: Vec<Vec<f64>>,
    pub theta_grid: Vec<Vec<f64>>,
    /// Row-major in `(omega, theta)`.
    pub entries: Vec<ClassicalEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeOptions {
    pub diagonal_band: f64,
    pub solve: SolveOptions,
}

impl Default for AmplitudeOptions {
    fn default() -> Self {
        Self { diagonal_band: DIAGONAL_BAND, solve: SolveOptions::default() }
    }
}

fn check_grids(omegas: &[Vec<f64>], thetas: &[Vec<f64>]) -> Result<usize> {
    let n = omegas.first().map(|v| v.len()).ok_or_else(|| Error::Domain("empty omega grid".into()))?;
    if thetas.is_empty() {
        return Err(Error::Domain("empty theta grid".into()));
    }
    if omegas.iter().chain(thetas).any(|v| v.len() != n) {
        return Err(Error::Domain("directions of mixed dimension".into()));
    }
    Ok(n)
}

fn check_h(h_values: &[f64]) -> Result<()> {
    if h_values.is_empty() || h_values.iter().any(|h| !(*h > 0.0)) || h_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("h values must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// Solves every off-diagonal pair once.
pub fn classical_cache(
    system: &HamiltonianSystem,
    omegas: &[Vec<f64>],
    thetas: &[Vec<f64>],
    opts: &AmplitudeOptions,
) -> Result<ClassicalCache> {
    check_grids(omegas, thetas)?;
    let nt = thetas.len();
    let entries: Vec<Result<ClassicalEntry>> = par::map_range(omegas.len() * nt, |idx| {
        let (om, th) = (&omegas[idx / nt], &thetas[idx % nt]);
        if separation(om, th) < opts.diagonal_band {
            return Ok(ClassicalEntry { flag: EntryFlag::DiagonalMask, branches: vec![] });
        }
        let degenerate = Ok(ClassicalEntry { flag: EntryFlag::Degenerate, branches: vec![] });
        let mut sols = match find_all(system, om, th, &opts.solve) {
            Ok(s) => s,
            Err(Error::Degenerate(_) | Error::DegenerateEndpoint(_)) => return degenerate,
            Err(e) => return Err(e),
        };
        if sols.is_empty() {
            return Ok(ClassicalEntry { flag: EntryFlag::Shadow, branches: vec![] });
        }
        if sols.iter().any(|s| s.degenerate) {
            return degenerate;
        }
        match fill_actions(system, &mut sols) {
            Ok(()) => {}
            Err(Error::Degenerate(_) | Error::DegenerateEndpoint(_)) => return degenerate,
            Err(e) => return Err(e),
        }
        let branches = sols.iter().map(Branch::from_solution).collect::<Result<Vec<_>>>()?;
        Ok(ClassicalEntry { flag: EntryFlag::Filled, branches })
    });
    Ok(ClassicalCache {
        lambda: system.lambda(),
        omega_grid: omegas.to_vec(),
        theta_grid: thetas.to_vec(),
        entries: entries.into_iter().collect::<Result<_>>()?,
    })
}

impl ClassicalCache {
    pub fn flags(&self) -> Vec<EntryFlag> {
        self.entries.iter().map(|e| e.flag).collect()
    }

    /// Semiclassical kernel at every `h`, from the cached data alone.
    pub fn kernel(&self, h_values: &[f64]) -> Result<AmplitudeGrid> {
        check_h(h_values)?;
        let kernel = h_values
            .iter()
            .flat_map(|h| self.entries.iter().map(move |e| leading_term(&e.branches, *h)))
            .collect();
        Ok(AmplitudeGrid {
            dimension: self.omega_grid[0].len(),
            lambda: self.lambda,
            h_values: h_values.to_vec(),
            omega_grid: self.omega_grid.clone(),
            theta_grid: self.theta_grid.clone(),
            kernel,
            flags: self.flags(),
            source: Source::Semiclassical,
            normalization: Normalization::plain("sum |sigma_hat|^-1/2 exp(i S/h - i mu pi/2)"),
        })
    }
}

/// Kernel values on an `(h, omega, theta)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeGrid {
    pub dimension: usize,
    pub lambda: f64,
    pub h_values: Vec<f64>,
    pub omega_grid: Vec<Vec<f64>>,
    pub theta_grid: Vec<Vec<f64>>,
    /// Row-major in `(h, omega, theta)`; zero off the filled entries.
    pub kernel: Vec<Complex64>,
    /// Row-major in `(omega, theta)`.
    pub flags: Vec<EntryFlag>,
    pub source: Source,
    pub normalization: Normalization,
}

impl AmplitudeGrid {
    pub fn pairs(&self) -> usize {
        self.omega_grid.len() * self.theta_grid.len()
    }

    pub fn at(&self, h_index: usize, i: usize, j: usize) -> Complex64 {
        self.kernel[h_index * self.pairs() + i * self.theta_grid.len() + j]
    }

    pub fn flag(&self, i: usize, j: usize) -> EntryFlag {
        self.flags[i * self.theta_grid.len() + j]
    }

    /// Kernel slice at one `h`.
    pub fn slice(&self, h_index: usize) -> &[Complex64] {
        let p = self.pairs();
        &self.kernel[h_index * p..(h_index + 1) * p]
    }

    /// Multiplies the kernel by `c` and records it.
    pub fn scaled(mut self, c: Complex64) -> Self {
        for v in &mut self.kernel {
            *v *= c;
        }
        self.normalization.constant *= c;
        self
    }

    fn same_layout(&self, other: &AmplitudeGrid) -> bool {
        self.h_values == other.h_values && self.omega_grid == other.omega_grid && self.theta_grid == other.theta_grid
    }
}

/// Semiclassical kernel on a grid: solve once, evaluate at every `h`.
pub fn synthesize(
    system: &HamiltonianSystem,
    omegas: &[Vec<f64>],
    thetas: &[Vec<f64>],
    h_values: &[f64],
    opts: &AmplitudeOptions,
) -> Result<AmplitudeGrid> {
    check_h(h_values)?;
    classical_cache(system, omegas, thetas, opts)?.kernel(h_values)
}

/// Exact kernel of a radial potential on a grid, one partial-wave solve per `h`.
pub fn oracle_grid(
    model: &PotentialModel,
    lambda: f64,
    omegas: &[Vec<f64>],
    thetas: &[Vec<f64>],
    h_values: &[f64],
    diagonal_band: f64,
    opts: &OracleOptions,
) -> Result<AmplitudeGrid> {
    let n = check_grids(omegas, thetas)?;
    check_h(h_values)?;
    let nt = thetas.len();
    let flags: Vec<EntryFlag> = (0..omegas.len() * nt)
        .map(|idx| {
            if separation(&omegas[idx / nt], &thetas[idx % nt]) < diagonal_band {
                EntryFlag::DiagonalMask
            } else {
                EntryFlag::Filled
            }
        })
        .collect();
    let mut kernel = Vec::with_capacity(h_values.len() * flags.len());
    for h in h_values {
        let sol = phase_shifts(model, lambda, *h, None, opts)?;
        let slice: Vec<Complex64> = par::map_range(flags.len(), |idx| match flags[idx] {
            EntryFlag::Filled => sol.amplitude_at(scattering_angle(&omegas[idx / nt], &thetas[idx % nt])),
            _ => Complex64::new(0.0, 0.0),
        });
        kernel.extend(slice);
    }
    Ok(AmplitudeGrid {
        dimension: n,
        lambda,
        h_values: h_values.to_vec(),
        omega_grid: omegas.to_vec(),
        theta_grid: thetas.to_vec(),
        kernel,
        flags,
        source: Source::Oracle,
        normalization: Normalization::plain("partial-wave f, |f|^2 = differential cross-section"),
    })
}

/// Comparison of a semiclassical kernel with an exact one after one global
/// complex constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub h_values: Vec<f64>,
    /// Least-squares constant `C(h)` minimizing `sum |K_exact - C K_sc|^2` at each `h`.
    pub per_h: Vec<Complex64>,
    /// `C(h)` extrapolated linearly to `h = 0`; the calibration constant.
    pub constant: Complex64,
    /// `(sum |K_exact - C K_sc|^2 / sum |K_exact|^2)^{1/2}` at each `h`.
    pub relative_errors: Vec<f64>,
    /// Log-log slope of `relative_errors` against `h`.
    pub slope: f64,
    pub entries_used: usize,
}

pub fn calibrate(semiclassical: &AmplitudeGrid, exact: &AmplitudeGrid) -> Result<Calibration> {
    if !semiclassical.same_layout(exact) {
        return Err(Error::Domain("kernels are on different grids".into()));
    }
    let used: Vec<usize> = (0..semiclassical.pairs())
        .filter(|&p| semiclassical.flags[p] == EntryFlag::Filled && exact.flags[p] == EntryFlag::Filled)
        .collect();
    if used.is_empty() {
        return Err(Error::Domain("no entry is filled in both kernels".into()));
    }
    let nh = semiclassical.h_values.len();
    let per_h: Vec<Complex64> = (0..nh)
        .map(|k| {
            let (sc, ex) = (semiclassical.slice(k), exact.slice(k));
            let num: Complex64 = used.iter().map(|&p| sc[p].conj() * ex[p]).sum();
            let den: f64 = used.iter().map(|&p| sc[p].norm_sqr()).sum();
            num / den
        })
        .collect();
    let constant = if nh >= 2 {
        let hs = &semiclassical.h_values;
        let re = line_fit(hs, &per_h.iter().map(|c| c.re).collect::<Vec<_>>());
        let im = line_fit(hs, &per_h.iter().map(|c| c.im).collect::<Vec<_>>());
        Complex64::new(re, im)
    } else {
        per_h[0]
    };
    let relative_errors: Vec<f64> = (0..nh)
        .map(|k| {
            let (sc, ex) = (semiclassical.slice(k), exact.slice(k));
            let num: f64 = used.iter().map(|&p| (ex[p] - constant * sc[p]).norm_sqr()).sum();
            let den: f64 = used.iter().map(|&p| ex[p].norm_sqr()).sum();
            (num / den).sqrt()
        })
        .collect();
    let slope = log_slope(&semiclassical.h_values, &relative_errors);
    Ok(Calibration {
        h_values: semiclassical.h_values.clone(),
        per_h,
        constant,
        relative_errors,
        slope,
        entries_used: used.len(),
    })
}

/// Intercept at `x = 0` of the least-squares line through `(xs, ys)`.
fn line_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    my - slope(xs, ys) * mx
}

fn log_slope(hs: &[f64], vals: &[f64]) -> f64 {
    if hs.len() < 2 || vals.iter().any(|v| !(*v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    slope(&lx, &ly)
}

/// Outcome of the oscillatory-representation check on a single-branch patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicrolocalReport {
    pub h_values: Vec<f64>,
    /// RMS angular derivative of `arg(e^{-iS/h} K)` at each `h`.
    pub phase_derivative: Vec<f64>,
    /// Log-log slope of `phase_derivative` against `h`.
    pub phase_slope: f64,
    /// Largest relative spread of `|e^{-iS/h} K|` across `h` at one entry.
    pub modulus_spread: f64,
    pub entries_used: usize,
    /// Entries where more than one branch exists; the dominant one is used.
    pub multi_branch_entries: usize,
}

/// Strips the phase of the dominant branch from `kernel` and measures how
/// far the remainder is from an `h`-independent symbol.
pub fn microlocal_fit(kernel: &AmplitudeGrid, classical: &ClassicalCache) -> Result<MicrolocalReport> {
    if kernel.omega_grid != classical.omega_grid || kernel.theta_grid != classical.theta_grid {
        return Err(Error::Domain("kernel and classical data are on different grids".into()));
    }
    let (no, nt) = (kernel.omega_grid.len(), kernel.theta_grid.len());
    let dominant: Vec<Option<&Branch>> = (0..no * nt)
        .map(|p| {
            let e = &classical.entries[p];
            if e.flag != EntryFlag::Filled || kernel.flags[p] != EntryFlag::Filled {
                return None;
            }
            e.branches.iter().max_by(|a, b| a.weight().total_cmp(&b.weight()))
        })
        .collect();
    let entries_used = dominant.iter().filter(|d| d.is_some()).count();
    if entries_used == 0 {
        return Err(Error::Domain("no filled entries to fit".into()));
    }
    let multi_branch_entries = (0..no * nt)
        .filter(|&p| dominant[p].is_some() && classical.entries[p].branches.len() > 1)
        .count();

    let symbols: Vec<Vec<Option<Complex64>>> = kernel
        .h_values
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let slice = kernel.slice(k);
            (0..no * nt)
                .map(|p| dominant[p].map(|b| slice[p] * Complex64::from_polar(1.0, -b.action / h)))
                .collect()
        })
        .collect();

    for (k, sym) in symbols.iter().enumerate() {
        if let Some(msg) = detect_beating(sym, no, nt, &kernel.theta_grid) {
            return Err(Error::PatchInvalid(format!("{msg} at h = {}", kernel.h_values[k])));
        }
    }

    let phase_derivative: Vec<f64> = symbols
        .iter()
        .map(|sym| phase_derivative_rms(sym, no, nt, &kernel.omega_grid, &kernel.theta_grid))
        .collect();
    let mut modulus_spread: f64 = 0.0;
    for p in 0..no * nt {
        let mods: Vec<f64> = symbols.iter().filter_map(|s| s[p].map(|c| c.norm())).collect();
        if mods.is_empty() {
            continue;
        }
        let mean = mods.iter().sum::<f64>() / mods.len() as f64;
        let spread = mods.iter().fold(f64::MIN, |a, b| a.max(*b)) - mods.iter().fold(f64::MAX, |a, b| a.min(*b));
        if mean > 0.0 {
            modulus_spread = modulus_spread.max(spread / mean);
        }
    }
    Ok(MicrolocalReport {
        h_values: kernel.h_values.clone(),
        phase_slope: log_slope(&kernel.h_values, &phase_derivative),
        phase_derivative,
        modulus_spread,
        entries_used,
        multi_branch_entries,
    })
}

/// RMS over neighbouring filled entries (along both grid directions) of
/// `|arg(a_{next} / a)| / separation`.
fn phase_derivative_rms(
    sym: &[Option<Complex64>],
    no: usize,
    nt: usize,
    omegas: &[Vec<f64>],
    thetas: &[Vec<f64>],
) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut push = |a: Option<Complex64>, b: Option<Complex64>, sep: f64| {
        if let (Some(a), Some(b)) = (a, b) {
            if sep > 0.0 && a.norm() > 0.0 && b.norm() > 0.0 {
                let d = (b * a.conj()).arg() / sep;
                acc += d * d;
                count += 1;
            }
        }
    };
    for i in 0..no {
        for j in 0..nt {
            if j + 1 < nt {
                push(sym[i * nt + j], sym[i * nt + j + 1], separation(&thetas[j], &thetas[j + 1]));
            }
            if i + 1 < no {
                push(sym[i * nt + j], sym[(i + 1) * nt + j], separation(&omegas[i], &omegas[i + 1]));
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

/// A single branch gives a modulus with at most two turning points along a
/// grid line; interference of two branches makes it oscillate.
fn detect_beating(sym: &[Option<Complex64>], no: usize, nt: usize, thetas: &[Vec<f64>]) -> Option<String> {
    for i in 0..no {
        let line: Vec<(usize, f64)> = (0..nt).filter_map(|j| sym[i * nt + j].map(|c| (j, c.norm()))).collect();
        if line.len() < 4 {
            continue;
        }
        let mut turns = 0;
        let mut last_sign = 0.0;
        for w in line.windows(2) {
            let d = w[1].1 - w[0].1;
            if d.abs() <= 1e-9 * w[0].1.max(w[1].1) {
                continue;
            }
            if last_sign != 0.0 && d.signum() != last_sign {
                turns += 1;
            }
            last_sign = d.signum();
        }
        if turns >= 3 {
            let span = separation(&thetas[line[0].0], &thetas[line[line.len() - 1].0]);
            return Some(format!(
                "modulus beats along theta (row {i}: {turns} turning points over {span:.4} rad, about {:.2} rad^-1)",
                turns as f64 / (2.0 * span)
            ));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_serialize_in_kebab_case() {
        assert_eq!(serde_json::to_string(&EntryFlag::DiagonalMask).unwrap(), "\"diagonal-mask\"");
        assert_eq!(EntryFlag::DiagonalMask.as_str(), "diagonal-mask");
    }

    #[test]
    fn line_fit_recovers_intercept() {
        let xs = [0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
        assert!((line_fit(&xs, &ys) - 1.5).abs() < 1e-14);
    }
}
