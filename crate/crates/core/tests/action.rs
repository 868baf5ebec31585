mod common;

use common::{golden_max, radial_deflection};
use scatrel::action::{
    action, action_gradients, action_value, admissible_s, eikonal_check, mixed_hessian_deviation, offset_identity, phase,
    sphere_gradient, ActionOptions, PhaseRegion, PhaseSign,
};
use scatrel::asymptotics::{scatter, AsymptoticOptions};
use scatrel::bvsolve::{find_all, SolveOptions, TrajectorySolution};
use scatrel::flow::HamiltonianSystem;
use scatrel::frame::{dot, perp_frame, to_frame, unit};
use scatrel::potential::PotentialModel;
use scatrel::Error;

fn system(a: f64) -> HamiltonianSystem {
    HamiltonianSystem::new(PotentialModel::gaussian(2, a, 1.0, 2.0).unwrap(), 0.5).unwrap()
}

fn solutions(sys: &HamiltonianSystem, alpha: f64, beta: f64) -> Vec<TrajectorySolution> {
    find_all(sys, &unit(alpha), &unit(beta), &SolveOptions::default()).unwrap()
}

#[test]
fn straight_free_line_has_zero_action() {
    let sys = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
    let s = scatter(&sys, &[1.0, 0.0], &[0.0, 0.0], &AsymptoticOptions::default()).unwrap();
    let mut sol = TrajectorySolution::synthetic(0.0, 0.0, 0);
    sol.omega = vec![1.0, 0.0];
    sol.theta = vec![1.0, 0.0];
    sol.z = vec![0.0, 0.0];
    sol.scattering = Some(Box::new(s));
    assert!(action_value(&sys, &sol, 1e-12).unwrap().abs() < 1e-12);
    // The decomposition needs a non-degenerate branch.
    assert!(matches!(action(&sys, &sol, None, None, &ActionOptions::default()), Err(Error::Degenerate(_))));
}

#[test]
fn decomposition_matches_single_integral_and_is_s_independent() {
    let sys = system(0.1);
    let sols = solutions(&sys, 0.0, 0.1);
    assert_eq!(sols.len(), 2);
    for sol in &sols {
        let (lo, hi) = admissible_s(&sys, sol, 20.0).unwrap();
        let recs: Vec<_> = [0.2, 0.5, 0.8]
            .iter()
            .map(|f| action(&sys, sol, None, Some(lo + f * (hi - lo)), &ActionOptions::default()).unwrap())
            .collect();
        for r in &recs {
            let scale = 1.0 + r.value.abs();
            assert!(r.consistency <= 1e-8 * scale, "{r:?}");
            assert!(r.quadrature_agreement <= 1e-8 * scale, "{r:?}");
        }
        let spread = recs.iter().map(|r| r.value).fold(f64::MIN, f64::max)
            - recs.iter().map(|r| r.value).fold(f64::MAX, f64::min);
        assert!(spread <= 1e-8 * (1.0 + recs[0].value.abs()), "spread {spread:e}");
        // The three pieces genuinely move with s.
        assert!((recs[0].decomposition.phi_minus - recs[2].decomposition.phi_minus).abs() > 0.1);
    }
}

#[test]
fn weak_coupling_action_matches_line_integral() {
    let mut errs = Vec::new();
    for a in [1e-3, 2e-3] {
        let sys = system(a);
        // Deflection is of order a; aim at a fixed fraction of its maximum.
        let b_peak = golden_max(|b| radial_deflection(a, 0.5, b), 0.3, 3.0);
        let theta = 0.5 * radial_deflection(a, 0.5, b_peak);
        let sols = solutions(&sys, 0.0, theta);
        let sol = sols.last().unwrap();
        let s = action_value(&sys, sol, 1e-13).unwrap();
        let b = sol.z[1];
        // -<x_inf, v theta> - 2 * integral of V along t -> (t, b).
        let line = a * (2.0 * std::f64::consts::PI).sqrt() * (-b * b / 2.0).exp();
        let born = -dot(&sol.x_inf, &sol.theta) - 2.0 * line;
        errs.push((s - born).abs());
    }
    assert!(errs[0] < 1e-5, "{errs:?}");
    let ratio = errs[1] / errs[0];
    assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}, {errs:?}");
}

#[test]
fn eikonal_residual_is_small() {
    let sys = system(0.1);
    let region = PhaseRegion::default();
    for sign in [PhaseSign::Minus, PhaseSign::Plus] {
        let rep = eikonal_check(&sys, sign, &region, 100, 1e-3, 11).unwrap();
        assert_eq!(rep.samples, 100);
        assert!(rep.max_residual <= 1e-6, "{sign:?}: {rep:?}");
        assert!(rep.max_momentum_mismatch <= 1e-6, "{sign:?}: {rep:?}");
        assert!(rep.max_offset.is_finite() && rep.max_offset < 1.0, "{rep:?}");
    }
}

#[test]
fn mixed_hessian_approaches_identity_farther_out() {
    let sys = system(0.1);
    let near = PhaseRegion::default();
    let far = PhaseRegion { radius: 2.0 * near.radius, ..near };
    let e_near = mixed_hessian_deviation(&sys, PhaseSign::Minus, &near, 30, 1e-4, 3).unwrap();
    let e_far = mixed_hessian_deviation(&sys, PhaseSign::Minus, &far, 30, 1e-4, 3).unwrap();
    assert!(e_far < e_near, "{e_near} -> {e_far}");
    assert!(e_near < 0.5);
}

#[test]
fn phase_gradient_is_the_momentum_along_the_ray() {
    let sys = system(0.1);
    let sol = &solutions(&sys, 0.0, 0.1)[0];
    let s = sol.scattering.as_ref().unwrap();
    let lay = s.trajectory.layout();
    let xi: Vec<f64> = sol.theta.clone();
    for t in [6.0, 10.0, 15.0] {
        let y = s.trajectory.state_at(t);
        let q = &y[lay.q()];
        let p = &y[lay.p()];
        let ph = phase(&sys, PhaseSign::Plus, q, &xi, &PhaseRegion::default()).unwrap();
        for k in 0..2 {
            assert!((ph.gradient[k] - p[k]).abs() < 1e-6, "t = {t}: {:?} vs {p:?}", ph.gradient);
        }
    }
}

#[test]
fn transport_amplitude_tends_to_one() {
    let sys = system(0.1);
    let xi = [1.0, 0.0];
    let r = PhaseRegion::default();
    let near = phase(&sys, PhaseSign::Plus, &[3.5, 0.8], &xi, &r).unwrap().a0;
    let far = phase(&sys, PhaseSign::Plus, &[40.0, 0.8], &xi, &r).unwrap().a0;
    assert!((far - 1.0).abs() < (near - 1.0).abs());
    assert!((far - 1.0).abs() < 1e-2);
}

#[test]
fn action_gradients_reproduce_the_relation() {
    let sys = system(0.1);
    for sol in solutions(&sys, 0.0, 0.1) {
        let g = action_gradients(&sys, &sol, 1e-4, &SolveOptions::default()).unwrap();
        assert!(g.mismatch <= 1e-4, "{g:?}");
    }
}

#[test]
fn linear_pairing_has_the_analytic_gradient() {
    let v = 1.3;
    let x_inf = [0.4, -1.7];
    let theta = unit(0.7);
    let g = sphere_gradient(&theta, 1e-3, |th| Ok(-v * dot(&x_inf, th))).unwrap();
    let expect = to_frame(&x_inf, &perp_frame(&theta))[0] * -v;
    assert!((g[0] - expect).abs() < 1e-10, "{} vs {expect}", g[0]);
}

#[test]
fn offset_identity_holds_far_out() {
    let sys = system(0.1);
    let sol = &solutions(&sys, 0.0, 0.1)[1];
    let res = offset_identity(&sys, sol, &[8.0, 30.0], 1e-4).unwrap();
    assert!(res[1] <= res[0] + 1e-7, "{res:?}");
    assert!(res[1] < 1e-6, "{res:?}");
}

#[test]
fn stencil_across_the_fold_is_invalid() {
    let sys = system(0.1);
    let b_peak = golden_max(|b| radial_deflection(0.1, 0.5, b), 0.3, 3.0);
    let theta_max = radial_deflection(0.1, 0.5, b_peak);
    let sols = solutions(&sys, 0.0, theta_max - 1e-3);
    let e = action_gradients(&sys, &sols[0], 5e-3, &SolveOptions::default()).unwrap_err();
    assert!(matches!(e, Error::StencilInvalid(_)), "{e:?}");
}
