mod support;

use gtf_core::sim3::{ate, umeyama_sim3, AlignmentError, Sim3Transform};
use gtf_core::trajectory::Pose;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_is_invariant_to_similarity_of_the_estimate(seed in any::<u64>(), n in 4usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = support::random_points(&mut rng, n, 2.0);
        let b: Vec<_> = a
            .iter()
            .map(|p| p + support::random_points(&mut rng, 1, 0.1)[0])
            .collect();
        let (ta, tb) = (support::trajectory_from_points(&a), support::trajectory_from_points(&b));
        let (s, r, t) = support::random_sim3(&mut rng);
        let g = Sim3Transform::new(s, r, t);
        let base = ate(&ta, &tb, 0.02).unwrap().rmse;
        let moved = ate(&g.transform_trajectory(&ta), &tb, 0.02).unwrap().rmse;
        prop_assert!((base - moved).abs() <= 1e-9, "{base} vs {moved}");
    }

    #[test]
    fn rmse_and_per_pose_errors_agree(seed in any::<u64>(), n in 3usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = support::trajectory_from_points(&support::random_points(&mut rng, n, 1.0));
        let b = support::trajectory_from_points(&support::random_points(&mut rng, n, 1.0));
        let r = ate(&a, &b, 0.02).unwrap();
        let sum: f64 = r.per_pose_errors.iter().map(|e| e * e).sum();
        prop_assert!(r.rmse >= 0.0);
        prop_assert_eq!(r.pair_count, n);
        prop_assert!((r.rmse * r.rmse * n as f64 - sum).abs() <= 1e-9 * sum.max(1e-300));
        prop_assert!((r.transform.rotation.determinant() - 1.0).abs() < 1e-9);
        prop_assert!(r.transform.scale > 0.0);
    }
}

#[test]
fn closed_form_is_not_beaten_by_numeric_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = 3 + (support::normal(&mut rng).abs() * 3.0) as usize % 8;
        let src = support::random_points(&mut rng, n, 1.5);
        let dst = support::random_points(&mut rng, n, 1.5);
        let closed = umeyama_sim3(&src, &dst).unwrap().cost(&src, &dst);
        let (numeric, ..) = support::numeric_sim3(&src, &dst);
        assert!(numeric >= closed - 1e-8, "numeric {numeric} < closed form {closed}");
    }
}

#[test]
fn perturbed_five_pose_instance_matches_numeric_oracle() {
    let pts = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.2, 0.0),
        Vector3::new(2.0, 0.1, 0.5),
        Vector3::new(2.5, 1.3, 0.2),
        Vector3::new(1.2, 2.0, -0.4),
    ];
    let reference = support::trajectory_from_points(&pts);
    let g = Sim3Transform::new(1.7, Rotation3::from_euler_angles(0.4, -0.2, 1.1), Vector3::new(0.3, -2.0, 1.0));
    let estimate = g.transform_trajectory(&reference).map_poses(|p| {
        if (p.timestamp - 0.2).abs() < 1e-12 {
            Pose::new(p.timestamp, p.translation + Vector3::new(0.05, -0.05, 0.05), p.rotation)
        } else {
            p.clone()
        }
    });
    let closed = ate(&estimate, &reference, 0.02).unwrap().rmse;
    let numeric = support::numeric_ate(&estimate, &reference, 0.02);
    assert!(closed > 0.0);
    assert!((closed - numeric).abs() <= 1e-6 * numeric, "{closed} vs {numeric}");
}

#[test]
fn degenerate_and_short_inputs_are_errors() {
    let collinear = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0), Vector3::new(2.0, 2.0, 2.0)];
    assert!(matches!(
        umeyama_sim3(&collinear, &collinear),
        Err(AlignmentError::DegenerateConfiguration(_))
    ));
    let two = &collinear[..2];
    assert!(matches!(umeyama_sim3(two, two), Err(AlignmentError::TooFewPoints(2))));
    assert!(matches!(
        umeyama_sim3(&collinear, two),
        Err(AlignmentError::LengthMismatch { .. })
    ));
}
