use std::collections::HashSet;

use gctnet::geometry::symmetric_epipolar_residual;
use gctnet::scene::*;
use nalgebra::Vector3;

#[test]
fn outlier_fraction_matches_config_over_many_scenes() {
    for ratio in [0.3, 0.7] {
        let cfg = SceneConfig { outlier_ratio: ratio, ..SceneConfig::default() };
        let scenes = generate_split(&cfg, 100, 1_000).unwrap();
        let injected: usize = scenes.iter().map(|s| s.injected_outlier.iter().filter(|&&o| o).count()).sum();
        let total: usize = scenes.iter().map(Scene::len).sum();
        let frac = injected as f64 / total as f64;
        assert!((frac - ratio).abs() <= 0.02, "ratio {ratio}: observed {frac}");
    }
}

#[test]
fn noise_free_inliers_satisfy_the_constraint_exactly() {
    let cfg = SceneConfig { noise_sigma: 0.0, seed: 77, ..SceneConfig::default() };
    let s = generate_scene(&cfg).unwrap();
    let e = s.e_true.matrix();
    for (q, out) in s.corrs.coords().iter().zip(&s.injected_outlier) {
        if !out {
            let v = Vector3::new(q[2], q[3], 1.0).dot(&(e * Vector3::new(q[0], q[1], 1.0)));
            assert!(v.abs() <= 1e-10);
        }
    }
}

#[test]
fn labels_equal_brute_recomputation() {
    for s in generate_split(&SceneConfig::default(), 10, 0).unwrap() {
        let brute: Vec<bool> = s
            .corrs
            .coords()
            .iter()
            .map(|q| symmetric_epipolar_residual(s.e_true.matrix(), q) < 1e-4)
            .collect();
        assert_eq!(s.labels(), brute.as_slice());
    }
}

#[test]
fn clean_scene_labels_all_true() {
    let cfg = SceneConfig { outlier_ratio: 0.0, noise_sigma: 0.0, ..SceneConfig::default() };
    assert!(generate_scene(&cfg).unwrap().labels().iter().all(|&l| l));
}

#[test]
fn splits_with_different_bases_are_disjoint() {
    let cfg = SceneConfig { n_correspondences: 32, ..SceneConfig::default() };
    let train: HashSet<u64> = generate_split(&cfg, 50, 0).unwrap().iter().map(|s| s.config.seed).collect();
    let test: HashSet<u64> = generate_split(&cfg, 50, 1 << 32).unwrap().iter().map(|s| s.config.seed).collect();
    assert!(train.is_disjoint(&test));
}

#[test]
fn file_round_trip() {
    let scenes = generate_split(&SceneConfig { n_correspondences: 64, ..SceneConfig::default() }, 4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenes.bin");
    let mut f = std::fs::File::create(&path).unwrap();
    for s in &scenes {
        write_scene(&mut f, s).unwrap();
    }
    drop(f);
    let back = read_scenes(&mut std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, scenes);
}
