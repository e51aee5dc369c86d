use gctnet::geometry::*;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(unit(rng));
    let angle = rng.random_range(0.0..0.6);
    Pose::new(*Rotation3::from_axis_angle(&axis, angle).matrix(), unit(rng)).unwrap()
}

/// Exact projections of points in front of both cameras.
fn project_points(pose: &Pose, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0) * rng.random_range(2.0..8.0);
        let y = pose.rotation() * x + pose.translation();
        if y.z > 0.5 {
            out.push([x.x / x.z, x.y / x.z, y.x / y.z, y.y / y.z]);
        }
    }
    out
}

fn random_outliers(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max()
}

/// Raw residual: numerator and the four line components written out by hand.
fn residual_oracle(e: &Matrix3<f64>, q: &[f64; 4]) -> f64 {
    let p = [q[0], q[1], 1.0];
    let pp = [q[2], q[3], 1.0];
    let mut ep = [0.0; 3];
    let mut etpp = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            ep[i] += e[(i, j)] * p[j];
            etpp[j] += e[(i, j)] * pp[i];
        }
    }
    let num: f64 = (0..3).map(|i| pp[i] * ep[i]).sum();
    let den = ep[0] * ep[0] + ep[1] * ep[1] + etpp[0] * etpp[0] + etpp[1] * etpp[1];
    num * num / den.max(1e-15)
}

#[test]
fn canonical_forward_translation() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let e = essential_from_pose(&pose);
    let s = 1.0 / 2f64.sqrt();
    let expected = Matrix3::new(0.0, -s, 0.0, s, 0.0, 0.0, 0.0, 0.0, 0.0);
    assert!(e.distance(&EssentialMatrix::new(expected)) < 1e-15);
}

#[test]
fn essential_singular_values_and_epipolar_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let e = essential_from_pose(&pose);
        let sv = e.matrix().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        assert!(sv[0] < 1e-12 && (sv[1] - sv[2]).abs() < 1e-12);
        assert!((e.matrix().norm() - 1.0).abs() < 1e-12);
        for q in project_points(&pose, 4, &mut rng) {
            let v = Vector3::new(q[2], q[3], 1.0).dot(&(e.matrix() * Vector3::new(q[0], q[1], 1.0)));
            worst = worst.max(v.abs());
        }
    }
    assert!(worst <= 1e-10, "worst |x'ᵀEx| = {worst:e}");
}

#[test]
fn eight_point_recovers_truth_and_ignores_zero_weights() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let truth = essential_from_pose(&pose);
        let inliers = project_points(&pose, 20, &mut rng);
        let clean = CorrespondenceSet::new(inliers.clone()).unwrap();
        let est = weighted_eight_point(&clean, &[1.0; 20]).unwrap();
        assert!(est.e.distance(&truth) < 1e-6, "seed {seed}: {}", est.e.distance(&truth));
        assert!(!est.degenerate);

        let mut mixed = inliers;
        mixed.extend(random_outliers(20, &mut rng));
        let mut w = vec![1.0; 20];
        w.extend([0.0; 20]);
        let with_outliers = weighted_eight_point(&CorrespondenceSet::new(mixed).unwrap(), &w).unwrap();
        assert!(max_abs_diff(with_outliers.e.matrix(), est.e.matrix()) <= 1e-10);
    }
}

#[test]
fn eight_point_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pose = random_pose(&mut rng);
    let mut coords = project_points(&pose, 30, &mut rng);
    coords.extend(random_outliers(10, &mut rng));
    let weights: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..1.0)).collect();
    let base = weighted_eight_point(&CorrespondenceSet::new(coords.clone()).unwrap(), &weights).unwrap();
    let mut perm: Vec<usize> = (0..40).collect();
    perm.shuffle(&mut rng);
    let pc: Vec<_> = perm.iter().map(|&i| coords[i]).collect();
    let pw: Vec<_> = perm.iter().map(|&i| weights[i]).collect();
    let permuted = weighted_eight_point(&CorrespondenceSet::new(pc).unwrap(), &pw).unwrap();
    assert!(base.e.distance(&permuted.e) < 1e-10);
}

#[test]
fn projection_has_equal_singular_values_and_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p = EssentialMatrix::new(m).project();
        let mut sv: Vec<f64> = p.matrix().singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        assert!(sv[0] < 1e-9 && (sv[1] - sv[2]).abs() < 1e-9);
        assert!(p.matrix().determinant().abs() < 1e-9);
        assert_eq!(p.project(), p);
    }
}

#[test]
fn residual_zero_on_exact_match_and_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pose = random_pose(&mut rng);
    let e = essential_from_pose(&pose);
    for q in project_points(&pose, 50, &mut rng) {
        assert!(symmetric_epipolar_residual(e.matrix(), &q) < 1e-12);
    }
    for _ in 0..500 {
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let got = symmetric_epipolar_residual(&m, &q);
        let want = residual_oracle(&m, &q);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300), "{got} vs {want}");
        for lambda in [1e-3, 1.0, 7.3, 1e3] {
            let scaled = symmetric_epipolar_residual(&(m * lambda), &q);
            assert!((scaled - got).abs() <= 1e-9 * got.max(1e-300));
        }
    }
}

#[test]
fn verification_matches_loop_and_threshold_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pose = random_pose(&mut rng);
    let truth = essential_from_pose(&pose);
    let mut coords = project_points(&pose, 40, &mut rng);
    let mut labels = vec![true; 40];
    coords.extend(random_outliers(60, &mut rng));
    labels.extend(
        coords[40..]
            .iter()
            .map(|q| residual_oracle(truth.matrix(), q) < 1e-4),
    );
    let corrs = CorrespondenceSet::new(coords.clone()).unwrap();
    let v = full_size_verification(&truth, &corrs, 1e-4);
    assert_eq!(v.mask, labels);

    let other = EssentialMatrix::new(Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
    let v = full_size_verification(&other, &corrs, 1e-3);
    for (i, q) in coords.iter().enumerate() {
        let r = residual_oracle(other.matrix(), q);
        assert!((v.distances[i] - r).abs() <= 1e-12 * r.max(1e-300));
        assert_eq!(v.mask[i], r < 1e-3);
    }
    assert_eq!(v.inlier_count(), v.mask.iter().filter(|&&m| m).count());

    let noisy: Vec<[f64; 4]> = coords.iter().map(|q| [q[0], q[1], q[2] + 1e-4, q[3] - 1e-4]).collect();
    let v = full_size_verification(&truth, &CorrespondenceSet::new(noisy).unwrap(), 0.0);
    assert_eq!(v.inlier_count(), 0);
}

fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    ((((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

#[test]
fn decomposition_round_trips() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pose = random_pose(&mut rng);
        let corrs = CorrespondenceSet::new(project_points(&pose, 30, &mut rng)).unwrap();
        let e = essential_from_pose(&pose);
        let est = decompose_essential(&e, &corrs, &[true; 30]).unwrap();
        assert!(!est.ambiguous);
        assert_eq!(est.positive_depth, 30);
        assert!(rotation_angle(est.pose.rotation(), pose.rotation()) < 1e-6);
        let cos = est.pose.translation().dot(pose.translation()).clamp(-1.0, 1.0);
        assert!(cos.acos() < 1e-6, "cheirality should pick the true sign");
        assert!(essential_from_pose(&est.pose).distance(&e) < 1e-6);
    }
}

#[test]
fn pure_translation_and_single_point_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pose = Pose::new(Matrix3::identity(), Vector3::new(0.3, -0.2, 0.9)).unwrap();
    let corrs = CorrespondenceSet::new(project_points(&pose, 20, &mut rng)).unwrap();
    let e = essential_from_pose(&pose);
    let est = decompose_essential(&e, &corrs, &[true; 20]).unwrap();
    assert!(rotation_angle(est.pose.rotation(), &Matrix3::identity()) < 1e-6);
    assert!(est.pose.translation().dot(pose.translation()) > 1.0 - 1e-12);

    let mut mask = [false; 20];
    mask[4] = true;
    let single = decompose_essential(&e, &corrs, &mask).unwrap();
    assert_eq!(single.positive_depth, 1);
    assert!(matches!(
        decompose_essential(&e, &corrs, &[false; 20]),
        Err(GeometryError::NoInliers)
    ));
}

#[test]
fn pose_error_constructed_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_pose(&mut rng);
    assert_eq!(pose_error(&truth, &truth), (0.0, 0.0));
    let rz = *Rotation3::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians()).matrix();
    let turned = Pose::new(rz * truth.rotation(), *truth.translation()).unwrap();
    let (er, et) = pose_error(&turned, &truth);
    assert!((er - 10.0).abs() < 1e-6 && et == 0.0);
    let flipped = Pose::new(*truth.rotation(), -truth.translation()).unwrap();
    assert_eq!(pose_error(&flipped, &truth).1, 0.0);
}

#[test]
fn ransac_recovers_truth_through_half_outliers() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let pose = random_pose(&mut rng);
        let mut coords = project_points(&pose, 100, &mut rng);
        coords.extend(random_outliers(100, &mut rng));
        coords.shuffle(&mut rng);
        let corrs = CorrespondenceSet::new(coords).unwrap();
        let cfg = RansacConfig { iterations: 1000, seed, ..RansacConfig::default() };
        let res = ransac_eight_point(&corrs, &cfg).unwrap();
        let d = res.e.distance(&essential_from_pose(&pose));
        assert!(d < 1e-6, "seed {seed}: distance {d:e}");
        assert!(!res.low_confidence);
        assert_eq!(ransac_eight_point(&corrs, &cfg).unwrap(), res);
    }
}

#[test]
fn ransac_without_outliers_keeps_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pose = random_pose(&mut rng);
    let corrs = CorrespondenceSet::new(project_points(&pose, 60, &mut rng)).unwrap();
    let res = ransac_eight_point(&corrs, &RansacConfig::default()).unwrap();
    assert!(res.mask.iter().all(|&m| m));
}

#[test]
fn prefilter_drops_rows_before_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pose = random_pose(&mut rng);
    let mut coords = project_points(&pose, 40, &mut rng);
    coords.extend(random_outliers(160, &mut rng));
    let corrs = CorrespondenceSet::new(coords).unwrap();
    let keep: Vec<bool> = (0..200).map(|i| i < 40 || i % 10 == 0).collect();
    let cfg = RansacConfig { iterations: 1000, seed: 3, ..RansacConfig::default() };
    let res = ransac_with_prefilter(&corrs, &keep, &cfg).unwrap();
    assert!(res.e.distance(&essential_from_pose(&pose)) < 1e-6);
    assert_eq!(res.mask.len(), 200);
    assert!(res.mask[..40].iter().all(|&m| m));
    assert!(res.mask.iter().zip(&keep).all(|(&m, &k)| k || !m));
    assert!(ransac_with_prefilter(&corrs, &keep[1..], &cfg).is_err());
}

#[test]
fn ransac_rejects_tiny_sets() {
    let corrs = CorrespondenceSet::new(vec![[0.0, 0.1, 0.2, 0.3]; 7]).unwrap();
    assert!(ransac_eight_point(&corrs, &RansacConfig::default()).is_err());
}

proptest! {
    #[test]
    fn residual_scale_invariant(
        m in proptest::array::uniform9(-1.0f64..1.0),
        q in proptest::array::uniform4(-2.0f64..2.0),
        lambda in prop_oneof![Just(1e-3), Just(1.0), Just(1e3)],
    ) {
        let e = Matrix3::from_row_slice(&m);
        let r = symmetric_epipolar_residual(&e, &q);
        let rs = symmetric_epipolar_residual(&(e * lambda), &q);
        prop_assert!(r >= 0.0);
        prop_assert!((r - rs).abs() <= 1e-9 * r.max(1e-300));
    }
}
