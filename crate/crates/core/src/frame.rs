//! Deterministic orthonormal frames of `omega^perp` and sphere charts.
//!
//! For `n = 2` the frame of `omega` is the single vector `R90 omega`, which
//! makes frame coordinates coincide with the derivative of the polar angle.
//! For `n >= 3` the frame starts from the coordinate axis least aligned with
//! `omega` (ties go to the lower index) and is completed by Gram–Schmidt; in
//! three dimensions the second vector is `omega x e1`, so `(omega, e1, e2)` is
//! positively oriented. The frame jumps where the least-aligned axis changes.

/// Orthonormal basis of the orthogonal complement of the unit vector `omega`.
pub fn perp_frame(omega: &[f64]) -> Vec<Vec<f64>> {
    let n = omega.len();
    if n == 2 {
        return vec![vec![-omega[1], omega[0]]];
    }
    let mut axes: Vec<usize> = (0..n).collect();
    axes.sort_by(|&a, &b| omega[a].abs().partial_cmp(&omega[b].abs()).unwrap().then(a.cmp(&b)));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    let mut candidates = axes.into_iter();
    while basis.len() < n - 1 {
        if n == 3 && basis.len() == 1 {
            basis.push(cross(omega, &basis[0]));
            continue;
        }
        let axis = candidates.next().expect("enough axes for a frame");
        let mut v = vec![0.0; n];
        v[axis] = 1.0;
        orthogonalize(&mut v, omega);
        for b in &basis {
            orthogonalize(&mut v, b);
        }
        let len = dot(&v, &v).sqrt();
        if len < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        basis.push(v);
    }
    basis
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let c = dot(v, against);
    v.iter_mut().zip(against).for_each(|(x, a)| *x -= c * a);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Coordinates of `v` in `frame`.
pub fn to_frame(v: &[f64], frame: &[Vec<f64>]) -> Vec<f64> {
    frame.iter().map(|e| dot(v, e)).collect()
}

/// Vector with coordinates `c` in `frame`.
pub fn from_frame(c: &[f64], frame: &[Vec<f64>]) -> Vec<f64> {
    let n = frame[0].len();
    let mut v = vec![0.0; n];
    for (ci, e) in c.iter().zip(frame) {
        v.iter_mut().zip(e).for_each(|(x, y)| *x += ci * y);
    }
    v
}

/// Unit vector at polar angle `a`.
pub fn unit(a: f64) -> Vec<f64> {
    vec![a.cos(), a.sin()]
}

/// Polar angle of a planar vector.
pub fn angle(v: &[f64]) -> f64 {
    v[1].atan2(v[0])
}

/// Angle between two unit vectors, in `[0, pi]`.
pub fn separation(a: &[f64], b: &[f64]) -> f64 {
    // atan2 form keeps accuracy near 0 and pi.
    let c = dot(a, b);
    let s = if a.len() == 2 {
        (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - c * y).collect();
        dot(&d, &d).sqrt()
    };
    s.atan2(c)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = a.rem_euclid(tau);
    if r > std::f64::consts::PI {
        r - tau
    } else {
        r
    }
}

/// Which stereographic chart a point of the two-sphere belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    /// Projection from the north pole; used on the closed southern hemisphere.
    South,
    /// Projection from the south pole; used on the open northern hemisphere.
    North,
}

impl Chart {
    /// Overlap rule: a point uses the chart of its hemisphere, the equator
    /// belonging to the southern chart.
    pub fn for_point(x: &[f64]) -> Chart {
        if x[2] <= 0.0 {
            Chart::South
        } else {
            Chart::North
        }
    }

    /// Point of the unit sphere with stereographic coordinates `u`.
    pub fn point(self, u: &[f64]) -> Vec<f64> {
        let s = u[0] * u[0] + u[1] * u[1];
        let d = 1.0 + s;
        let sign = match self {
            Chart::South => -1.0,
            Chart::North => 1.0,
        };
        vec![2.0 * u[0] / d, 2.0 * u[1] / d, sign * (1.0 - s) / d]
    }

    /// Coordinate tangent vectors `d point / d u_k`. The chart is conformal
    /// with metric factor `4 / (1 + |u|^2)^2`.
    pub fn tangents(self, u: &[f64]) -> [Vec<f64>; 2] {
        let s = u[0] * u[0] + u[1] * u[1];
        let d = 1.0 + s;
        let sign = match self {
            Chart::South => -1.0,
            Chart::North => 1.0,
        };
        let col = |k: usize| {
            let mut t: Vec<f64> = (0..2)
                .map(|j| {
                    let delta = if j == k { 2.0 / d } else { 0.0 };
                    delta - 4.0 * u[j] * u[k] / (d * d)
                })
                .collect();
            t.push(-4.0 * sign * u[k] / (d * d));
            t
        };
        [col(0), col(1)]
    }

    /// Stereographic coordinates of a point of the unit sphere.
    pub fn coords(self, x: &[f64]) -> [f64; 2] {
        let d = match self {
            Chart::South => 1.0 - x[2],
            Chart::North => 1.0 + x[2],
        };
        [x[0] / d, x[1] / d]
    }
}
