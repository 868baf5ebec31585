mod common;

use common::{bisect, golden_max, radial_deflection};
use scatrel::asymptotics::{scatter, AsymptoticOptions};
use scatrel::bvsolve::{find_all, nondegeneracy_report, SolveOptions};
use scatrel::flow::{integrate, HamiltonianSystem, IntegrateOptions};
use scatrel::frame::{angle, unit};
use scatrel::potential::PotentialModel;
use scatrel::Error;

fn system(a: f64) -> HamiltonianSystem {
    HamiltonianSystem::new(PotentialModel::gaussian(2, a, 1.0, 2.0).unwrap(), 0.5).unwrap()
}

/// Sign changes of the transverse separation of two neighbouring rays at
/// impact parameters `b -+ db`, on a uniform grid of `samples` times. The
/// rays are integrated independently, without the variational system.
fn ray_crossings(sys: &HamiltonianSystem, b: f64, db: f64, t_end: f64, samples: usize) -> usize {
    let rays: Vec<_> = [b - db, b + db]
        .iter()
        .map(|&bb| {
            let s = scatter(sys, &[1.0, 0.0], &[0.0, bb], &AsymptoticOptions::default()).unwrap();
            let inc = &s.incoming;
            integrate(sys, &inc.q, &inc.p, (inc.t_start, t_end), &IntegrateOptions::default()).unwrap()
        })
        .collect();
    let t0 = rays[0].start_time();
    let mut prev = 0.0;
    let mut changes = 0;
    for k in 0..=samples {
        let t = t0 + (t_end - t0) * k as f64 / samples as f64;
        let a = rays[0].state_at(t);
        let c = rays[1].state_at(t);
        let (px, py) = (0.5 * (a[2] + c[2]), 0.5 * (a[3] + c[3]));
        let (dx, dy) = (c[0] - a[0], c[1] - a[1]);
        let d = px * dy - py * dx;
        if k > 0 && d.signum() != prev {
            changes += 1;
        }
        prev = d.signum();
    }
    changes
}

#[test]
fn free_motion_has_no_connections() {
    let sys = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
    let sols = find_all(&sys, &unit(0.0), &unit(0.4), &SolveOptions::default()).unwrap();
    assert!(sols.is_empty());
}

#[test]
fn diagonal_is_excluded() {
    let sys = system(1.0);
    assert_eq!(
        find_all(&sys, &unit(0.3), &unit(0.3), &SolveOptions::default()).unwrap_err(),
        Error::DiagonalExcluded
    );
}

#[test]
fn strong_repulsive_gaussian_has_one_branch() {
    // A > lambda: the particle never reaches the center and the deflection
    // decreases monotonically from pi to 0.
    let sys = system(1.0);
    let theta = 0.3;
    let sols = find_all(&sys, &unit(0.0), &unit(theta), &SolveOptions::default()).unwrap();
    assert_eq!(sols.len(), 1);
    let b_oracle = bisect(|b| radial_deflection(1.0, 0.5, b) - theta, 0.5, 4.0, 200);
    assert!((sols[0].z[1] - b_oracle).abs() < 1e-8, "{} vs {b_oracle}", sols[0].z[1]);
    assert!(sols[0].condition <= 1e-10);
    assert!(sols[0].sigma_hat < 0.0);
    // Rays with nearby impact parameters cross once past the potential.
    let crossings = ray_crossings(&sys, b_oracle, 1e-4, 400.0, 10_000);
    assert_eq!(sols[0].maslov, Some(crossings as u32));
    assert_eq!(crossings, 1);
}

#[test]
fn weak_repulsive_gaussian_has_two_branches() {
    // For A < lambda the deflection rises from 0, peaks near b = 1 and decays.
    let sys = system(0.1);
    let theta = 0.1;
    let sols = find_all(&sys, &unit(0.0), &unit(theta), &SolveOptions::default()).unwrap();
    assert_eq!(sols.len(), 2);
    let b_peak = golden_max(|b| radial_deflection(0.1, 0.5, b), 0.3, 3.0);
    let inner = bisect(|b| radial_deflection(0.1, 0.5, b) - theta, 0.05, b_peak, 200);
    let outer = bisect(|b| radial_deflection(0.1, 0.5, b) - theta, b_peak, 4.0, 200);
    assert!((sols[0].z[1] - inner).abs() < 1e-8);
    assert!((sols[1].z[1] - outer).abs() < 1e-8);
    assert!(sols[0].sigma_hat > 0.0 && sols[1].sigma_hat < 0.0);
    assert_eq!(sols[0].maslov, Some(ray_crossings(&sys, inner, 1e-4, 400.0, 10_000) as u32));
    assert_eq!(sols[1].maslov, Some(ray_crossings(&sys, outer, 1e-4, 400.0, 10_000) as u32));
    assert_eq!(sols[0].maslov, Some(0));
    assert_eq!(sols[1].maslov, Some(1));
}

#[test]
fn attractive_well_roots_cover_every_sign_change() {
    let sys = system(-0.3);
    let theta = -0.25;
    let sols = find_all(&sys, &unit(0.0), &unit(theta), &SolveOptions::default()).unwrap();
    assert!(sols.len() >= 2);
    // Exhaustive scan of the residual on 10^4 impact parameters.
    let zs: Vec<f64> = (0..10_000).map(|i| -4.0 + 8.0 * (i as f64 + 0.5) / 10_000.0).collect();
    let res: Vec<f64> = zs
        .iter()
        .map(|&b| {
            let s = scatter(&sys, &[1.0, 0.0], &[0.0, b], &AsymptoticOptions::default()).unwrap();
            scatrel::frame::wrap(angle(&s.datum.xi_inf) - theta)
        })
        .collect();
    let mut changes = Vec::new();
    for i in 0..zs.len() - 1 {
        if res[i].signum() != res[i + 1].signum() && res[i].abs() < 1.0 {
            changes.push(0.5 * (zs[i] + zs[i + 1]));
        }
    }
    assert_eq!(changes.len(), sols.len());
    for c in changes {
        assert!(sols.iter().any(|s| (s.z[1] - c).abs() < 1e-3), "unreported root near {c}");
    }
    for s in &sols {
        let m = ray_crossings(&sys, s.z[1], 1e-4, 400.0, 10_000) as u32;
        assert_eq!(s.maslov, Some(m), "root at {}", s.z[1]);
    }
}

#[test]
fn doubling_seed_density_keeps_the_solution_set() {
    let sys = system(0.1);
    let base = SolveOptions::default();
    let dense = SolveOptions { grid_density: 2.0 * base.grid_density, ..base };
    let a = find_all(&sys, &unit(0.2), &unit(0.3), &base).unwrap();
    let b = find_all(&sys, &unit(0.2), &unit(0.3), &dense).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let d = (x.z[0] - y.z[0]).hypot(x.z[1] - y.z[1]);
        assert!(d <= 10.0 * base.tol / x.sigma_hat.abs().min(1.0));
    }
}

#[test]
fn reciprocity_of_solutions() {
    let sys = system(0.1);
    let (omega, theta) = (unit(0.1), unit(0.2));
    for s in find_all(&sys, &omega, &theta, &SolveOptions::default()).unwrap() {
        let back: Vec<f64> = theta.iter().map(|x| -x).collect();
        let r = scatter(&sys, &back, &s.w, &AsymptoticOptions::default()).unwrap();
        assert!((r.datum.xi_inf[0] + omega[0]).abs() < 1e-6);
        assert!((r.datum.xi_inf[1] + omega[1]).abs() < 1e-6);
        let zb = r.datum.outgoing_impact();
        assert!((zb[0] - s.z[0]).abs() < 1e-6 && (zb[1] - s.z[1]).abs() < 1e-6);
        // w is exactly the theta-perpendicular part of x_inf.
        let along = s.w[0] * theta[0] + s.w[1] * theta[1];
        assert!(along.abs() < 1e-14);
    }
}

#[test]
fn regularity_flips_at_the_fold() {
    let sys = system(0.1);
    let b_peak = golden_max(|b| radial_deflection(0.1, 0.5, b), 0.3, 3.0);
    let theta_max = radial_deflection(0.1, 0.5, b_peak);
    let threshold = 2e-2;
    let far = find_all(&sys, &unit(0.0), &unit(theta_max - 2e-2), &SolveOptions::default()).unwrap();
    let rep = nondegeneracy_report(&far, threshold);
    assert_eq!(rep.count, 2);
    assert!(rep.regular);
    let near = find_all(&sys, &unit(0.0), &unit(theta_max - 1e-4), &SolveOptions::default()).unwrap();
    let rep = nondegeneracy_report(&near, threshold);
    assert!(!near.is_empty());
    assert!(!rep.regular && rep.caustic, "{rep:?}");
    let beyond = find_all(&sys, &unit(0.0), &unit(theta_max + 1e-3), &SolveOptions::default()).unwrap();
    assert!(beyond.is_empty());
}
