//! Short-range potential models.
//!
//! Every shipped kind is radial about an optional center. Values, gradients
//! and Hessians are closed form except for the tabulated kind, which uses a
//! clamped cubic spline. Decay constants `C_k` for derivative orders
//! `k = 0, 1, 2` are measured once at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    Gaussian,
    CompactBump,
    YukawaSmoothed,
    RadialTabulated,
}

/// What a tabulated model does beyond its last knot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Extrapolation {
    /// `V = 0` beyond the last knot.
    #[default]
    ZeroTail,
    /// Queries beyond the table are domain errors.
    Error,
}

/// Clamped cubic spline on `[0, r_N]` with zero slope at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpline {
    r: Vec<f64>,
    f: Vec<f64>,
    m: Vec<f64>,
    policy: Extrapolation,
}

impl RadialSpline {
    pub fn new(r: Vec<f64>, f: Vec<f64>, policy: Extrapolation) -> Result<Self> {
        if r.len() != f.len() || r.len() < 3 {
            return Err(Error::Domain("table needs at least three (radius, value) rows".into()));
        }
        if r[0] != 0.0 {
            return Err(Error::Domain("table must start at radius 0".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r.iter().chain(&f).any(|v| !v.is_finite()) {
            return Err(Error::Domain("table radii must be finite and strictly increasing".into()));
        }
        let fmax = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if f[f.len() - 1].abs() > 1e-12 * fmax.max(1e-300) {
            return Err(Error::Domain(
                "last tabulated value must vanish for the zero tail to be continuous".into(),
            ));
        }
        let m = clamped_second_derivatives(&r, &f);
        Ok(Self { r, f, m, policy })
    }

    pub fn last_radius(&self) -> f64 {
        *self.r.last().unwrap()
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.r, &self.f)
    }

    pub fn policy(&self) -> Extrapolation {
        self.policy
    }

    /// Value, first and second radial derivative.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.r.len();
        if x >= self.r[n - 1] {
            return (0.0, 0.0, 0.0);
        }
        let i = match self.r.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let h = self.r[i + 1] - self.r[i];
        let a = (self.r[i + 1] - x) / h;
        let b = (x - self.r[i]) / h;
        let (mi, mj) = (self.m[i], self.m[i + 1]);
        let (fi, fj) = (self.f[i], self.f[i + 1]);
        let val = a * fi + b * fj + ((a * a * a - a) * mi + (b * b * b - b) * mj) * h * h / 6.0;
        let d1 = (fj - fi) / h - (3.0 * a * a - 1.0) / 6.0 * h * mi + (3.0 * b * b - 1.0) / 6.0 * h * mj;
        let d2 = a * mi + b * mj;
        (val, d1, d2)
    }
}

fn clamped_second_derivatives(r: &[f64], f: &[f64]) -> Vec<f64> {
    // Tridiagonal system for the knot second derivatives with f'(r_0) = f'(r_N) = 0.
    let n = r.len();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let h0 = r[1] - r[0];
    diag[0] = h0 / 3.0;
    sup[0] = h0 / 6.0;
    rhs[0] = (f[1] - f[0]) / h0;
    for i in 1..n - 1 {
        let (hl, hr) = (r[i] - r[i - 1], r[i + 1] - r[i]);
        sub[i] = hl / 6.0;
        diag[i] = (hl + hr) / 3.0;
        sup[i] = hr / 6.0;
        rhs[i] = (f[i + 1] - f[i]) / hr - (f[i] - f[i - 1]) / hl;
    }
    let hn = r[n - 1] - r[n - 2];
    sub[n - 1] = hn / 6.0;
    diag[n - 1] = hn / 3.0;
    rhs[n - 1] = -(f[n - 1] - f[n - 2]) / hn;
    // Thomas algorithm.
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
enum Profile {
    Zero,
    Gaussian { amplitude: f64, width: f64 },
    CompactBump { amplitude: f64, radius: f64 },
    Yukawa { amplitude: f64, length: f64, smoothing: f64 },
    Tabulated(RadialSpline),
}

/// Radial profile derivatives at distance `r` from the center: value `f`,
/// `f'`, `f''`, and `a = f'/r` evaluated without cancellation near `r = 0`.
#[derive(Debug, Clone, Copy)]
struct Radial {
    f: f64,
    fp: f64,
    fpp: f64,
    a: f64,
}

impl Profile {
    fn radial(&self, r: f64) -> Radial {
        let s = r * r;
        match self {
            Profile::Zero => Radial { f: 0.0, fp: 0.0, fpp: 0.0, a: 0.0 },
            Profile::Gaussian { amplitude, width } => {
                let w2 = width * width;
                let g = amplitude * (-s / (2.0 * w2)).exp();
                let g1 = -g / (2.0 * w2);
                let g2 = g / (4.0 * w2 * w2);
                from_square_form(r, g, g1, g2)
            }
            Profile::CompactBump { amplitude, radius } => {
                let r2 = radius * radius;
                let u = s / r2;
                if u >= 1.0 {
                    return Radial { f: 0.0, fp: 0.0, fpp: 0.0, a: 0.0 };
                }
                let om = 1.0 - u;
                let phi = 1.0 - 1.0 / om;
                let dphi = -1.0 / (om * om);
                let ddphi = -2.0 / (om * om * om);
                let g = amplitude * phi.exp();
                let g1 = g * dphi / r2;
                let g2 = g * (dphi * dphi + ddphi) / (r2 * r2);
                from_square_form(r, g, g1, g2)
            }
            Profile::Yukawa { amplitude, length, smoothing } => {
                let sig = (s + smoothing * smoothing).sqrt();
                let g = amplitude * smoothing * (-(sig - smoothing) / length).exp() / sig;
                let hh = -1.0 / length - 1.0 / sig;
                let g1 = g * hh / (2.0 * sig);
                let dgs = g * (hh * hh / (2.0 * sig) + 1.0 / (2.0 * sig * sig * sig) - hh / (2.0 * sig * sig));
                let g2 = dgs / (2.0 * sig);
                from_square_form(r, g, g1, g2)
            }
            Profile::Tabulated(sp) => {
                let (f, fp, fpp) = sp.eval(r);
                let a = if r > 1e-12 { fp / r } else { fpp };
                Radial { f, fp, fpp, a }
            }
        }
    }
}

/// Converts derivatives of `g(s)`, `s = r^2`, into radial derivatives.
fn from_square_form(r: f64, g: f64, g1: f64, g2: f64) -> Radial {
    let a = 2.0 * g1;
    Radial {
        f: g,
        fp: a * r,
        fpp: a + 4.0 * g2 * r * r,
        a,
    }
}

/// Suprema of potential quantities beyond a radius; `value` is the positive part.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TailEnvelope {
    pub abs_value: f64,
    pub value: f64,
    pub grad: f64,
    pub radial_grad: f64,
}

/// A short-range potential `V` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    kind: PotentialKind,
    profile: Profile,
    rho: f64,
    dimension: usize,
    center: Vec<f64>,
    decay_constants: [f64; 3],
    envelope: Envelope,
}

/// Suffix suprema on a radial grid about the center, used for tail bounds and
/// escape certificates.
#[derive(Debug, Clone, PartialEq)]
struct Envelope {
    radii: Vec<f64>,
    sup_value: Vec<f64>,
    sup_grad: Vec<f64>,
    sup_radial_grad: Vec<f64>,
    sup_value_signed: Vec<f64>,
    max_value: f64,
    min_value: f64,
}

impl PotentialModel {
    fn build(kind: PotentialKind, profile: Profile, rho: f64, dimension: usize) -> Result<Self> {
        if !(rho > 1.0) || !rho.is_finite() {
            return Err(Error::UnsupportedDecay { rho });
        }
        if dimension < 2 {
            return Err(Error::Domain(format!("dimension must be at least 2, got {dimension}")));
        }
        let mut model = Self {
            kind,
            profile,
            rho,
            dimension,
            center: vec![0.0; dimension],
            decay_constants: [0.0; 3],
            envelope: Envelope {
                radii: vec![],
                sup_value: vec![],
                sup_grad: vec![],
                sup_radial_grad: vec![],
                sup_value_signed: vec![],
                max_value: 0.0,
                min_value: 0.0,
            },
        };
        model.refresh_measurements();
        Ok(model)
    }

    pub fn zero(dimension: usize) -> Result<Self> {
        Self::build(PotentialKind::Zero, Profile::Zero, 2.0, dimension)
    }

    /// `V(x) = A exp(-|x|^2 / (2 w^2))`.
    pub fn gaussian(dimension: usize, amplitude: f64, width: f64, rho: f64) -> Result<Self> {
        check_params(&[amplitude, width])?;
        if width <= 0.0 {
            return Err(Error::Domain("gaussian width must be positive".into()));
        }
        Self::build(PotentialKind::Gaussian, Profile::Gaussian { amplitude, width }, rho, dimension)
    }

    /// `V(x) = A exp(1 - 1/(1 - |x|^2/R^2))` inside radius `R`, zero outside.
    pub fn compact_bump(dimension: usize, amplitude: f64, radius: f64, rho: f64) -> Result<Self> {
        check_params(&[amplitude, radius])?;
        if radius <= 0.0 {
            return Err(Error::Domain("bump radius must be positive".into()));
        }
        Self::build(
            PotentialKind::CompactBump,
            Profile::CompactBump { amplitude, radius },
            rho,
            dimension,
        )
    }

    /// `V(x) = A a exp(-(s - a)/L) / s` with `s = sqrt(|x|^2 + a^2)`.
    pub fn yukawa_smoothed(
        dimension: usize,
        amplitude: f64,
        length: f64,
        smoothing: f64,
        rho: f64,
    ) -> Result<Self> {
        check_params(&[amplitude, length, smoothing])?;
        if length <= 0.0 || smoothing <= 0.0 {
            return Err(Error::Domain("yukawa length and smoothing must be positive".into()));
        }
        Self::build(
            PotentialKind::YukawaSmoothed,
            Profile::Yukawa { amplitude, length, smoothing },
            rho,
            dimension,
        )
    }

    pub fn radial_tabulated(
        dimension: usize,
        radii: Vec<f64>,
        values: Vec<f64>,
        rho: f64,
        policy: Extrapolation,
    ) -> Result<Self> {
        let sp = RadialSpline::new(radii, values, policy)?;
        Self::build(PotentialKind::RadialTabulated, Profile::Tabulated(sp), rho, dimension)
    }

    /// Parses a two-column whitespace- or comma-separated (radius, value)
    /// table. Blank lines and lines starting with `#` are ignored.
    pub fn tabulated_from_text(
        dimension: usize,
        text: &str,
        rho: f64,
        policy: Extrapolation,
    ) -> Result<Self> {
        let mut r = Vec::new();
        let mut f = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::Domain(format!("table line {}: expected two columns", lineno + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Domain(format!("table line {}: {e}", lineno + 1)))
            };
            r.push(parse(cols[0])?);
            f.push(parse(cols[1])?);
        }
        Self::radial_tabulated(dimension, r, f, rho, policy)
    }

    /// Moves the center of the radial profile.
    pub fn centered_at(mut self, center: &[f64]) -> Result<Self> {
        if center.len() != self.dimension || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("center must be a finite point of the model dimension".into()));
        }
        self.center = center.to_vec();
        self.refresh_measurements();
        Ok(self)
    }

    /// Overrides the measured decay constants (used to test the decay check).
    pub fn with_decay_constants(mut self, constants: [f64; 3]) -> Self {
        self.decay_constants = constants;
        self
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn decay_constants(&self) -> [f64; 3] {
        self.decay_constants
    }

    pub fn is_radial_about_origin(&self) -> bool {
        self.center.iter().all(|c| *c == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.kind == PotentialKind::Zero
    }

    /// Exact support bound about the origin for compactly supported kinds.
    pub fn support_radius(&self) -> Option<f64> {
        let shift = norm(&self.center);
        match &self.profile {
            Profile::CompactBump { radius, .. } => Some(radius + shift),
            Profile::Tabulated(sp) if sp.policy == Extrapolation::ZeroTail => {
                Some(sp.last_radius() + shift)
            }
            Profile::Zero => Some(0.0),
            _ => None,
        }
    }

    /// Characteristic interaction length.
    pub fn length_scale(&self) -> f64 {
        match &self.profile {
            Profile::Zero => 1.0,
            Profile::Gaussian { width, .. } => *width,
            Profile::CompactBump { radius, .. } => *radius,
            Profile::Yukawa { length, smoothing, .. } => length.max(*smoothing),
            Profile::Tabulated(sp) => sp.last_radius(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.envelope.max_value
    }

    pub fn min_value(&self) -> f64 {
        self.envelope.min_value
    }

    pub fn extrapolation(&self) -> Option<Extrapolation> {
        match &self.profile {
            Profile::Tabulated(sp) => Some(sp.policy),
            _ => None,
        }
    }

    /// Radial profile value at distance `r` from the center.
    pub fn profile_value(&self, r: f64) -> f64 {
        self.profile.radial(r).f
    }

    /// Radial profile derivative at distance `r` from the center.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        self.profile.radial(r).fp
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::Domain(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dimension
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite evaluation point".into()));
        }
        if let Profile::Tabulated(sp) = &self.profile {
            if sp.policy == Extrapolation::Error && self.distance(x) > sp.last_radius() {
                return Err(Error::Domain("query beyond the tabulated range".into()));
            }
        }
        Ok(())
    }

    fn distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.value_unchecked(x))
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut g = vec![0.0; self.dimension];
        self.eval_all(x, &mut g, None);
        Ok(g)
    }

    /// Row-major `n x n` Hessian.
    pub fn hess(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let n = self.dimension;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.eval_all(x, &mut g, Some(&mut h));
        Ok(h)
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        if self.kind == PotentialKind::Zero {
            return 0.0;
        }
        self.profile.radial(self.distance(x)).f
    }

    /// Value, gradient and (optionally) Hessian in one pass. No validation.
    pub(crate) fn eval_all(&self, x: &[f64], grad: &mut [f64], hess: Option<&mut [f64]>) -> f64 {
        let n = self.dimension;
        if self.kind == PotentialKind::Zero {
            grad.iter_mut().for_each(|g| *g = 0.0);
            if let Some(h) = hess {
                h.iter_mut().for_each(|v| *v = 0.0);
            }
            return 0.0;
        }
        let mut d = [0.0f64; 8];
        let d = &mut d[..n];
        for i in 0..n {
            d[i] = x[i] - self.center[i];
        }
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rad = self.profile.radial(r);
        for i in 0..n {
            grad[i] = rad.a * d[i];
        }
        if let Some(h) = hess {
            let c = if r > 0.0 { (rad.fpp - rad.a) / (r * r) } else { 0.0 };
            for i in 0..n {
                for j in 0..n {
                    let delta = if i == j { rad.a } else { 0.0 };
                    h[i * n + j] = delta + c * d[i] * d[j];
                }
            }
        }
        rad.f
    }

    fn far_radius(&self) -> f64 {
        match &self.profile {
            Profile::Zero => 1.0,
            Profile::Gaussian { width, .. } => 40.0 * width,
            Profile::CompactBump { radius, .. } => *radius,
            Profile::Yukawa { length, smoothing, .. } => 760.0 * length + smoothing,
            Profile::Tabulated(sp) => sp.last_radius(),
        }
    }

    fn radial_grid(&self) -> Vec<f64> {
        let far = self.far_radius();
        let near = far.min(40.0 * self.length_scale());
        let mut grid: Vec<f64> = (0..=4000).map(|i| near * i as f64 / 4000.0).collect();
        let mut r = near;
        while r < far {
            r = (r * 1.01).min(far);
            grid.push(r);
        }
        grid
    }

    fn refresh_measurements(&mut self) {
        let grid = self.radial_grid();
        let shift = norm(&self.center);
        let rho = self.rho;
        let mut sup_v = vec![0.0; grid.len()];
        let mut sup_g = vec![0.0; grid.len()];
        let mut sup_rg = vec![0.0; grid.len()];
        let mut sup_vs = vec![f64::NEG_INFINITY; grid.len()];
        let (mut vmax, mut vmin) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut consts = [0.0f64; 3];
        for (i, &d) in grid.iter().enumerate() {
            let rad = self.profile.radial(d);
            sup_v[i] = rad.f.abs();
            sup_vs[i] = rad.f;
            sup_g[i] = rad.fp.abs();
            sup_rg[i] = (d + shift) * rad.fp.abs();
            vmax = vmax.max(rad.f);
            vmin = vmin.min(rad.f);
            // Worst case over points at distance d from the center: |x| is at
            // most d + |c|, which maximises the weight.
            let jx = (1.0 + (d + shift).powi(2)).sqrt();
            let hmax = rad.a.abs().max(rad.fpp.abs());
            consts[0] = consts[0].max(rad.f.abs() * jx.powf(rho));
            consts[1] = consts[1].max(rad.fp.abs() * jx.powf(rho + 1.0));
            consts[2] = consts[2].max(hmax * jx.powf(rho + 2.0));
        }
        for i in (0..grid.len() - 1).rev() {
            sup_v[i] = sup_v[i].max(sup_v[i + 1]);
            sup_g[i] = sup_g[i].max(sup_g[i + 1]);
            sup_rg[i] = sup_rg[i].max(sup_rg[i + 1]);
            sup_vs[i] = sup_vs[i].max(sup_vs[i + 1]);
        }
        if self.kind == PotentialKind::Zero {
            vmax = 0.0;
            vmin = 0.0;
        }
        // Grid maxima are polished by a small safety margin so that samples
        // between grid points never exceed the stored constants.
        self.decay_constants = consts.map(|c| c * 1.02);
        self.envelope = Envelope {
            radii: grid,
            sup_value: sup_v,
            sup_grad: sup_g,
            sup_radial_grad: sup_rg,
            sup_value_signed: sup_vs,
            max_value: vmax,
            min_value: vmin,
        };
    }

    fn envelope_index(&self, d: f64) -> Option<usize> {
        let radii = &self.envelope.radii;
        if d > *radii.last().unwrap() {
            return None;
        }
        Some(match radii.binary_search_by(|v| v.partial_cmp(&d).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        })
    }

    /// Suprema of `|V|`, `V`, `|grad V|` and `|x| |grad V|` over `|x| >= r`.
    pub fn envelope_beyond(&self, r: f64) -> TailEnvelope {
        let d = (r - norm(&self.center)).max(0.0);
        match self.envelope_index(d) {
            Some(i) => TailEnvelope {
                abs_value: self.envelope.sup_value[i],
                value: self.envelope.sup_value_signed[i].max(0.0),
                grad: self.envelope.sup_grad[i],
                radial_grad: self.envelope.sup_radial_grad[i],
            },
            None => TailEnvelope::default(),
        }
    }

    /// Grid radii (about the origin) at which the envelope changes.
    pub(crate) fn envelope_radii(&self) -> Vec<f64> {
        let shift = norm(&self.center);
        self.envelope.radii.iter().map(|d| d + shift).collect()
    }

    /// Radius beyond which `|V|` stays below `eps`.
    pub fn negligible_radius(&self, eps: f64) -> f64 {
        let shift = norm(&self.center);
        let radii = &self.envelope.radii;
        let idx = self.envelope.sup_value.iter().position(|v| *v <= eps);
        match idx {
            Some(i) => radii[i] + shift,
            None => radii.last().unwrap() + shift,
        }
    }

    /// Momentum and position residuals of the free-flight approximation for
    /// a straight path that stays beyond radius `r`, moving at speed `v`.
    pub fn tail_bounds(&self, r: f64, speed: f64) -> (f64, f64) {
        // Power-law bound from the decay hypothesis.
        let c1 = self.decay_constants[1];
        let rho = self.rho;
        let jr = (1.0 + r * r).sqrt();
        let pl_p = c1 * jr.powf(-rho) / (rho * speed);
        let pl_q = c1 * jr.powf(1.0 - rho) / (rho * (rho - 1.0) * speed * speed);
        // Measured envelope bound: integrate the suffix suprema.
        let shift = norm(&self.center);
        let radii = &self.envelope.radii;
        let sup_g = &self.envelope.sup_grad;
        let (mut ip, mut iq) = (0.0, 0.0);
        for i in 0..radii.len() - 1 {
            let (a, b) = (radii[i] + shift, radii[i + 1] + shift);
            if b <= r {
                continue;
            }
            let a = a.max(r);
            let g = sup_g[i];
            ip += g * (b - a);
            iq += g * 0.5 * ((b - r).powi(2) - (a - r).powi(2));
        }
        let env_p = ip / speed;
        let env_q = iq / (speed * speed);
        (pl_p.min(env_p), pl_q.min(env_q))
    }
}

fn check_params(ps: &[f64]) -> Result<()> {
    if ps.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("model parameters must be finite".into()));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outcome of [`verify_decay`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// Max over samples of `|d^k V| <x>^(rho + k)` for `k = 0, 1, 2`.
    pub max_ratio: [f64; 3],
    pub constants: [f64; 3],
    pub pass: bool,
    /// First sample point (and derivative order) violating its constant.
    pub witness: Option<(Vec<f64>, usize)>,
}

/// Checks the short-range decay bound on deterministic samples with `|x| >= 1`.
///
/// Samples lie on `sample_count` rays in fixed directions, each probed at
/// geometrically spaced radii from 1 out to well beyond the interaction range.
pub fn verify_decay(model: &PotentialModel, sample_count: usize) -> DecayReport {
    let n = model.dimension();
    let rho = model.rho();
    let c = model.decay_constants();
    let mut max_ratio = [0.0f64; 3];
    let mut witness = None;
    let r_hi = (60.0 * model.length_scale() + norm(model.center())).max(10.0);
    let samples = sample_count.max(1);
    let radii_per_ray = 64;
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    for s in 0..samples {
        let dir = sample_direction(n, s, samples);
        for k in 0..radii_per_ray {
            let t = k as f64 / (radii_per_ray - 1) as f64;
            // Irrational offset keeps samples off the construction grid.
            let r = r_hi.powf(t) * (1.0 + 0.00731 * ((s * 7 + k) % 13) as f64 / 13.0);
            let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
            let v = model.eval_all(&x, &mut g, Some(&mut h));
            let jx = (1.0 + r * r).sqrt();
            let d1 = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let d2 = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let ratios = [
                v.abs() * jx.powf(rho),
                d1 * jx.powf(rho + 1.0),
                d2 * jx.powf(rho + 2.0),
            ];
            for o in 0..3 {
                max_ratio[o] = max_ratio[o].max(ratios[o]);
                if witness.is_none() && ratios[o] > c[o] {
                    witness = Some((x.clone(), o));
                }
            }
        }
    }
    DecayReport {
        max_ratio,
        constants: c,
        pass: witness.is_none(),
        witness,
    }
}

/// Deterministic, roughly uniform unit directions.
pub(crate) fn sample_direction(n: usize, i: usize, count: usize) -> Vec<f64> {
    let golden = 0.618_033_988_749_894_9;
    if n == 2 {
        let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / count as f64;
        return vec![a.cos(), a.sin()];
    }
    // Spherical Fibonacci lattice in the first three coordinates.
    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
    let rr = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * ((i as f64 * golden) % 1.0);
    let mut v = vec![0.0; n];
    v[0] = rr * phi.cos();
    v[1] = rr * phi.sin();
    v[2] = z;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<PotentialModel> {
        let radii: Vec<f64> = (0..=2000).map(|i| 4.0 * i as f64 / 2000.0).collect();
        let values: Vec<f64> = radii
            .iter()
            .map(|r| {
                let u = (r / 4.0).powi(2);
                if u < 1.0 { 0.3 * (1.0 - u).powi(4) } else { 0.0 }
            })
            .collect();
        vec![
            PotentialModel::zero(2).unwrap(),
            PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap(),
            PotentialModel::gaussian(2, -1.0, 1.0, 2.0).unwrap(),
            PotentialModel::compact_bump(2, 0.2, 3.0, 2.0).unwrap(),
            PotentialModel::yukawa_smoothed(2, 0.5, 1.0, 0.5, 2.0).unwrap(),
            PotentialModel::radial_tabulated(2, radii, values, 2.0, Extrapolation::ZeroTail).unwrap(),
            PotentialModel::gaussian(3, 0.1, 1.0, 2.0).unwrap(),
        ]
    }

    #[test]
    fn zero_model_is_zero() {
        let m = PotentialModel::zero(2).unwrap();
        assert_eq!(m.eval(&[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(m.grad(&[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.hess(&[3.0, 4.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn gaussian_values() {
        let m = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap();
        assert_eq!(m.eval(&[0.0, 0.0]).unwrap(), 0.1);
        // 0.1 * exp(-1/2) to 17 digits.
        let expected = 0.060_653_065_971_263_34;
        assert!((m.eval(&[1.0, 0.0]).unwrap() - expected).abs() < 1e-16);
        assert_eq!(m.grad(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        let m = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap();
        assert!(matches!(m.eval(&[f64::NAN, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn long_range_is_rejected() {
        assert!(matches!(
            PotentialModel::gaussian(2, 0.1, 1.0, 1.0),
            Err(Error::UnsupportedDecay { .. })
        ));
    }

    #[test]
    fn gaussian_gradient_matches_central_difference() {
        let m = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap();
        let g = m.grad(&[1.0, 0.0]).unwrap();
        let step = 1e-4;
        let fd = (m.eval(&[1.0 + step, 0.0]).unwrap() - m.eval(&[1.0 - step, 0.0]).unwrap()) / (2.0 * step);
        assert!((g[0] - fd).abs() <= 1e-7);
        assert!(g[1].abs() < 1e-18);
    }

    #[test]
    fn derivatives_match_finite_differences_for_every_kind() {
        let step = 2e-4;
        for m in models() {
            let n = m.dimension();
            let scale = m.length_scale();
            let mut worst: f64 = 0.0;
            for s in 0..100 {
                let dir = sample_direction(n, s, 100);
                let r = 0.05 * scale + 1.7 * scale * ((s as f64 * 0.618_033_988_7) % 1.0);
                let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
                let g = m.grad(&x).unwrap();
                let h = m.hess(&x).unwrap();
                let gscale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-3 * m.max_value().abs().max(m.min_value().abs()));
                let hscale = h.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-3 * m.max_value().abs().max(m.min_value().abs()));
                for i in 0..n {
                    // Fourth-order central stencil.
                    let shifted = |k: f64| {
                        let mut y = x.clone();
                        y[i] += k * step;
                        y
                    };
                    let pts = [shifted(2.0), shifted(1.0), shifted(-1.0), shifted(-2.0)];
                    let vals: Vec<f64> = pts.iter().map(|p| m.eval(p).unwrap()).collect();
                    let fd = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * step);
                    if gscale > 0.0 {
                        worst = worst.max((fd - g[i]).abs() / gscale);
                    }
                    let grads: Vec<Vec<f64>> = pts.iter().map(|p| m.grad(p).unwrap()).collect();
                    for j in 0..n {
                        let fdh = (-grads[0][j] + 8.0 * grads[1][j] - 8.0 * grads[2][j] + grads[3][j])
                            / (12.0 * step);
                        if hscale > 0.0 {
                            worst = worst.max((fdh - h[j * n + i]).abs() / hscale);
                        }
                    }
                }
            }
            assert!(worst <= 1e-6, "{:?}: relative derivative error {worst:e}", m.kind());
        }
    }

    #[test]
    fn radial_models_are_rotation_invariant() {
        for m in models().into_iter().filter(|m| m.dimension() == 2) {
            for k in 0..20 {
                let a = 0.37 * k as f64;
                let x = [1.3, -0.4];
                let y = [a.cos() * x[0] - a.sin() * x[1], a.sin() * x[0] + a.cos() * x[1]];
                assert!((m.eval(&x).unwrap() - m.eval(&y).unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn compact_kinds_vanish_outside_support() {
        let m = PotentialModel::compact_bump(2, 0.2, 3.0, 2.0).unwrap();
        assert_eq!(m.support_radius(), Some(3.0));
        for k in 0..50 {
            let r = 3.0 + 1e-9 + 0.1 * k as f64;
            assert_eq!(m.eval(&[r * 0.6, r * 0.8]).unwrap(), 0.0);
        }
        assert!(m.eval(&[2.9, 0.0]).unwrap() > 0.0);
    }

    #[test]
    fn shipped_models_pass_decay_check() {
        for m in models() {
            let rep = verify_decay(&m, 16);
            assert!(rep.pass, "{:?} failed decay: {:?}", m.kind(), rep);
        }
        let zero = verify_decay(&PotentialModel::zero(2).unwrap(), 4);
        assert_eq!(zero.max_ratio, [0.0; 3]);
    }

    #[test]
    fn misdeclared_constants_produce_witness() {
        let m = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap().with_decay_constants([0.0; 3]);
        let rep = verify_decay(&m, 4);
        assert!(!rep.pass);
        let (x, order) = rep.witness.unwrap();
        assert!(norm(&x) >= 1.0);
        assert_eq!(order, 0);
    }

    #[test]
    fn table_text_and_policies() {
        let text = "# r v\n0 1\n1, 0.5\n2 0.1\n3 0\n";
        let m = PotentialModel::tabulated_from_text(2, text, 2.0, Extrapolation::ZeroTail).unwrap();
        assert!((m.eval(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.eval(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.eval(&[5.0, 0.0]).unwrap(), 0.0);
        let strict = PotentialModel::tabulated_from_text(2, text, 2.0, Extrapolation::Error).unwrap();
        assert!(matches!(strict.eval(&[5.0, 0.0]), Err(Error::Domain(_))));
        assert!(PotentialModel::tabulated_from_text(2, "0 1\n1 2\n", 2.0, Extrapolation::ZeroTail).is_err());
        assert!(PotentialModel::tabulated_from_text(2, "0 1\n1 2\n2 1\n", 2.0, Extrapolation::ZeroTail).is_err());
    }

    #[test]
    fn tail_bounds_shrink_with_radius() {
        let m = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap();
        let (p5, q5) = m.tail_bounds(5.0, 1.0);
        let (p8, q8) = m.tail_bounds(8.0, 1.0);
        assert!(p8 < p5 && q8 < q5);
        assert!(p8 < 1e-10);
        let bump = PotentialModel::compact_bump(2, 0.2, 3.0, 2.0).unwrap();
        assert_eq!(bump.tail_bounds(3.5, 1.0), (0.0, 0.0));
    }
}
