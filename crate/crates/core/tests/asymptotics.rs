mod common;

use common::radial_deflection;
use proptest::prelude::*;
use scatrel::asymptotics::{prepare_incoming, scatter, AsymptoticOptions};
use scatrel::flow::{integrate, HamiltonianSystem, IntegrateOptions};
use scatrel::frame::{angle, unit};
use scatrel::potential::PotentialModel;

fn gaussian_system(a: f64) -> HamiltonianSystem {
    HamiltonianSystem::new(PotentialModel::gaussian(2, a, 1.0, 2.0).unwrap(), 0.5).unwrap()
}

fn theta_of(sys: &HamiltonianSystem, b: f64) -> f64 {
    let s = scatter(sys, &[1.0, 0.0], &[0.0, b], &AsymptoticOptions::default()).unwrap();
    angle(&s.datum.xi_inf)
}

#[test]
fn long_horizon_direction_agrees() {
    let sys = gaussian_system(0.1);
    let s = scatter(&sys, &[1.0, 0.0], &[0.0, 1.0], &AsymptoticOptions::default()).unwrap();
    let inc = prepare_incoming(&sys, &[1.0, 0.0], &[0.0, 1.0], 1e-12).unwrap();
    let traj = integrate(&sys, &inc.q, &inc.p, (inc.t_start, 1e4), &IntegrateOptions::default()).unwrap();
    let p = traj.p(traj.len() - 1);
    let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
    assert!((p[0] / pn - s.datum.xi_inf[0]).abs() < 1e-6);
    assert!((p[1] / pn - s.datum.xi_inf[1]).abs() < 1e-6);
}

#[test]
fn weak_coupling_matches_line_integral() {
    let b = 1.0;
    let mut errs = Vec::new();
    for a in [1e-3, 2e-3] {
        let sys = gaussian_system(a);
        // -(1/2 lambda) * integral of <grad V, e_perp> ds along x = (s, b).
        let ds = 1e-3;
        let mut born = 0.0;
        for k in -40_000..=40_000 {
            let s = k as f64 * ds;
            let dvdy = -a * b * (-(s * s + b * b) / 2.0).exp();
            born -= dvdy * ds;
        }
        errs.push((theta_of(&sys, b) - born).abs());
    }
    // Second order in the coupling.
    assert!(errs[0] < 1e-5, "{errs:?}");
    let ratio = errs[1] / errs[0];
    assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
}

#[test]
fn jacobian_matches_finite_difference() {
    let sys = gaussian_system(0.1);
    let b = 0.8;
    let s = scatter(&sys, &[1.0, 0.0], &[0.0, b], &AsymptoticOptions::default()).unwrap();
    let step = 1e-4;
    let fd = (theta_of(&sys, b + step) - theta_of(&sys, b - step)) / (2.0 * step);
    assert!((s.dxi_dz[0] - fd).abs() <= 1e-4 * fd.abs(), "{} vs {fd}", s.dxi_dz[0]);
}

#[test]
fn jacobian_matches_radial_deflection_derivative() {
    let sys = gaussian_system(0.1);
    for b in [0.5, 1.0, 1.7] {
        let s = scatter(&sys, &[1.0, 0.0], &[0.0, b], &AsymptoticOptions::default()).unwrap();
        let theta = angle(&s.datum.xi_inf);
        assert!((theta - radial_deflection(0.1, 0.5, b)).abs() < 1e-7);
        let h = 1e-3;
        let d = (radial_deflection(0.1, 0.5, b + h) - radial_deflection(0.1, 0.5, b - h)) / (2.0 * h);
        assert!((s.dxi_dz[0] - d).abs() < 1e-5 * (1.0 + d.abs()), "b={b}: {} vs {d}", s.dxi_dz[0]);
    }
}

#[test]
fn tolerance_refinement_within_error() {
    let sys = gaussian_system(0.1);
    let coarse = AsymptoticOptions { incoming_tol: 1e-8, ..Default::default() };
    let fine = AsymptoticOptions { incoming_tol: 1e-9, ..Default::default() };
    let z = [-0.3f64.sin() * 0.9, 0.3f64.cos() * 0.9];
    let a = scatter(&sys, &unit(0.3), &z, &coarse).unwrap();
    let b = scatter(&sys, &unit(0.3), &z, &fine).unwrap();
    assert!(b.incoming.t_start < a.incoming.t_start);
    let d = (a.datum.xi_inf[0] - b.datum.xi_inf[0]).hypot(a.datum.xi_inf[1] - b.datum.xi_inf[1]);
    assert!(d <= 2.0 * a.datum.extraction_error.max(b.datum.extraction_error), "{d} vs {}", a.datum.extraction_error);
}

#[test]
fn compact_start_independence() {
    let sys = HamiltonianSystem::new(PotentialModel::compact_bump(2, 0.2, 3.0, 2.0).unwrap(), 0.5).unwrap();
    let inc = prepare_incoming(&sys, &[1.0, 0.0], &[0.0, 2.0], 1e-10).unwrap();
    // An earlier start on the same free line, carried to t_start, is the same state.
    let t_early = inc.t_start - 4.0;
    let q_early = [t_early, 2.0];
    let carried = [q_early[0] + (inc.t_start - t_early), q_early[1]];
    assert!((carried[0] - inc.q[0]).abs() < 1e-12 && (carried[1] - inc.q[1]).abs() < 1e-12);
    let s = scatter(&sys, &[1.0, 0.0], &[0.0, 2.0], &AsymptoticOptions::default()).unwrap();
    let traj = integrate(&sys, &q_early, &[1.0, 0.0], (t_early, s.extraction_times[0]), &IntegrateOptions::default()).unwrap();
    let q = traj.q(traj.len() - 1);
    let sq = s.trajectory.last();
    assert!((q[0] - sq[0]).abs() < 1e-9 && (q[1] - sq[1]).abs() < 1e-9);
}

#[test]
fn time_reversal_recovers_incoming_data() {
    let sys = gaussian_system(0.1);
    let omega = unit(0.2);
    let z = [-0.2f64.sin() * 1.1, 0.2f64.cos() * 1.1];
    let fwd = scatter(&sys, &omega, &z, &AsymptoticOptions::default()).unwrap();
    let theta = fwd.datum.xi_inf.clone();
    let back_dir: Vec<f64> = theta.iter().map(|x| -x).collect();
    let w = fwd.datum.outgoing_impact();
    let back = scatter(&sys, &back_dir, &w, &AsymptoticOptions::default()).unwrap();
    assert!((back.datum.xi_inf[0] + omega[0]).abs() < 1e-7);
    assert!((back.datum.xi_inf[1] + omega[1]).abs() < 1e-7);
    let zb = back.datum.outgoing_impact();
    assert!((zb[0] - z[0]).abs() < 1e-7 && (zb[1] - z[1]).abs() < 1e-7, "{zb:?} vs {z:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn rotation_equivariance(rot in -3.1f64..3.1, b in -2.0f64..2.0) {
        let sys = gaussian_system(0.1);
        let base = scatter(&sys, &[1.0, 0.0], &[0.0, b], &AsymptoticOptions::default()).unwrap();
        let omega = unit(rot);
        let z = [-rot.sin() * b, rot.cos() * b];
        let rotated = scatter(&sys, &omega, &z, &AsymptoticOptions::default()).unwrap();
        let (c, s) = (rot.cos(), rot.sin());
        let xi = &base.datum.xi_inf;
        let expect = [c * xi[0] - s * xi[1], s * xi[0] + c * xi[1]];
        prop_assert!((rotated.datum.xi_inf[0] - expect[0]).abs() < 1e-8);
        prop_assert!((rotated.datum.xi_inf[1] - expect[1]).abs() < 1e-8);
    }
}
