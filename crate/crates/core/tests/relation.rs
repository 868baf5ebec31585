use scatrel::asymptotics::AsymptoticOptions;
use scatrel::flow::HamiltonianSystem;
use scatrel::frame::{unit, Chart};
use scatrel::potential::PotentialModel;
use scatrel::relation::{
    convergence_study, lagrangian_residual, sample, RelationPatch, RelationPoint, RelationSample, SampleOptions,
};
use scatrel::Error;

fn shifted_gaussian() -> HamiltonianSystem {
    let pot = PotentialModel::gaussian(2, 0.1, 1.0, 2.0).unwrap().centered_at(&[0.3, -0.2]).unwrap();
    HamiltonianSystem::new(pot, 0.5).unwrap()
}

fn patch() -> RelationPatch {
    RelationPatch::planar((0.0, 0.1), (0.5, 1.5))
}

/// Graph of the differential of `S(alpha, beta) = cos(alpha - beta)`, with
/// `z = dS/d alpha` at `omega` and the twisted covector `dS/d beta` at `theta`.
fn gradient_graph(res: usize) -> RelationSample {
    let (a0, a1, b0, b1) = (0.0, 0.6, 1.0, 1.6);
    let mut points = Vec::new();
    for i in 0..res {
        for j in 0..res {
            let a = a0 + (a1 - a0) * i as f64 / (res - 1) as f64;
            let b = b0 + (b1 - b0) * j as f64 / (res - 1) as f64;
            let (omega, theta) = (unit(a), unit(b));
            let ds_da = -(a - b).sin();
            let ds_db = (a - b).sin();
            let z = vec![-omega[1] * ds_da, omega[0] * ds_da];
            // Stored covector is -w.
            let w = vec![theta[1] * ds_db, -theta[0] * ds_db];
            points.push(RelationPoint::new(
                vec![a, b],
                (omega, z),
                (theta, w),
                true,
                (Chart::South, Chart::South),
                (a, b),
                0.0,
            ));
        }
    }
    let patch = RelationPatch::planar((a0, a1), (b0, b1));
    RelationSample::from_points(0.5, patch, vec![res, res], points, true, Chart::South).unwrap()
}

#[test]
fn gradient_graph_is_lagrangian() {
    let r = lagrangian_residual(&gradient_graph(21)).unwrap();
    assert!(r.max <= 1e-10 * r.scale, "{r:?}");
    assert!(r.scale > 0.1);
}

#[test]
fn free_relation_is_twisted_identity_and_diagonal() {
    let sys = HamiltonianSystem::new(PotentialModel::zero(2).unwrap(), 0.5).unwrap();
    let s = sample(&sys, &patch(), &[5, 5], &SampleOptions::default()).unwrap();
    assert!(s.twist_applied);
    for p in &s.points {
        for k in 0..2 {
            assert_eq!(p.theta[k], p.omega[k]);
            assert!((p.w[k] - p.z[k]).abs() < 1e-12);
            assert_eq!(p.zeta[k], -p.w[k]);
        }
    }
    assert_eq!(s.diagonal_points, 25);
    assert_eq!(s.require_off_diagonal().unwrap_err(), Error::DiagonalExcluded);
}

#[test]
fn shifted_gaussian_sample_is_accurate() {
    let sys = shifted_gaussian();
    let s = sample(&sys, &patch(), &[50, 50], &SampleOptions::default()).unwrap();
    assert_eq!(s.points.len(), 2500);
    assert_eq!(s.discarded, 0);
    assert_eq!(s.patch, patch());
    assert!(s.max_extraction_error < 1e-7, "{}", s.max_extraction_error);
    s.require_off_diagonal().unwrap();
}

#[test]
fn residual_converges_at_second_order() {
    let sys = shifted_gaussian();
    let rep = convergence_study(&sys, &patch(), &[50, 100], &SampleOptions::default()).unwrap();
    let ratio = rep.ratios[0];
    assert!(ratio >= 3.5 && ratio <= 4.6, "{rep:?}");
    let fine = &rep.rows[1];
    assert!(fine.residual <= 1e-5 * fine.scale, "{rep:?}");
    // The constant in residual <= C step^2 is stable between the two grids.
    let c0 = rep.rows[0].residual / rep.rows[0].step.powi(2);
    assert!((c0 / rep.constant - 1.0).abs() < 0.15);
}

#[test]
fn untwisted_relation_is_not_lagrangian() {
    let sys = shifted_gaussian();
    let opts = SampleOptions { twist: false, ..Default::default() };
    let s = sample(&sys, &patch(), &[11, 11], &opts).unwrap();
    assert!(!s.twist_applied);
    let r = lagrangian_residual(&s).unwrap();
    assert!(r.relative() > 0.3, "{r:?}");
}

#[test]
fn collapsed_parametrization_is_a_geometry_error() {
    let g = gradient_graph(5);
    let pts: Vec<RelationPoint> = g.points.iter().map(|_| g.points[0].clone()).collect();
    let s = RelationSample::from_points(0.5, g.patch.clone(), vec![5, 5], pts, true, Chart::South).unwrap();
    assert!(matches!(lagrangian_residual(&s), Err(Error::Geometry(_))));
}

#[test]
fn residual_needs_three_points_per_direction() {
    let sys = shifted_gaussian();
    let s = sample(&sys, &patch(), &[2, 4], &SampleOptions::default()).unwrap();
    assert!(matches!(lagrangian_residual(&s), Err(Error::Domain(_))));
}

fn orbiting_well() -> HamiltonianSystem {
    HamiltonianSystem::new(PotentialModel::gaussian(2, -1.0, 1.0, 2.0).unwrap(), 0.1).unwrap()
}

fn short_horizon() -> SampleOptions {
    SampleOptions {
        asymptotic: AsymptoticOptions { horizon_factor: 1.2, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn orbiting_band_invalidates_the_patch() {
    // Impact parameters near 3.0 orbit the well before escaping; with a short
    // horizon they stay undecided across a band of the patch.
    let sys = orbiting_well();
    let p = RelationPatch::planar((0.0, 0.05), (2.9, 3.1));
    let err = sample(&sys, &p, &[6, 41], &short_horizon()).unwrap_err();
    let Error::PatchInvalid(msg) = err else { panic!("{err:?}") };
    let band = msg.rsplit(" x ").next().unwrap();
    let nums: Vec<f64> = band
        .trim_matches(|c| c == '[' || c == ']')
        .split(", ")
        .map(|x| x.parse().unwrap())
        .collect();
    assert!(nums[0] > 2.95 && nums[1] < 3.01 && nums[1] - nums[0] > 0.01, "{msg}");
}

#[test]
fn a_few_bad_points_shrink_the_patch() {
    let sys = orbiting_well();
    let p = RelationPatch::planar((0.0, 0.05), (2.99, 3.2));
    let s = sample(&sys, &p, &[6, 43], &short_horizon()).unwrap();
    assert!(s.discarded > 0);
    assert!(s.patch.lower[1] > 2.99);
    assert_eq!(s.patch.upper[1], 3.2);
    assert_eq!(s.requested_patch, p);
    assert_eq!(s.points.len(), s.resolution.iter().product::<usize>());
}

#[test]
fn spherical_relation_converges() {
    let pot = PotentialModel::gaussian(3, 0.1, 1.0, 2.0).unwrap().centered_at(&[0.3, -0.2, 0.1]).unwrap();
    let sys = HamiltonianSystem::new(pot, 0.5).unwrap();
    let p = RelationPatch {
        lower: vec![0.9, -0.05, 0.5, -0.2],
        upper: vec![1.0, 0.05, 1.0, 0.3],
        chart: Chart::South,
    };
    let rep = convergence_study(&sys, &p, &[5, 9], &SampleOptions::default()).unwrap();
    assert!(rep.ratios[0] > 3.0, "{rep:?}");
    assert!(rep.rows[1].residual < 1e-3 * rep.rows[1].scale, "{rep:?}");
}
