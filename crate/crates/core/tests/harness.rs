use gctnet::harness::*;
use gctnet::network::{NetConfig, Variant};
use gctnet::scene::{generate_split, SceneConfig};
use proptest::prelude::*;

fn tiny() -> RunConfig {
    RunConfig {
        net: NetConfig {
            d: 8,
            heads: 2,
            r: 2,
            clusters: 4,
            ..NetConfig::default()
        },
        scene: SceneConfig {
            n_correspondences: 60,
            ..SceneConfig::default()
        },
        steps: 3,
        batch_size: 2,
        n_train: 5,
        n_val: 2,
        n_test: 3,
        val_every: 2,
        seeds: vec![4],
        rates: vec![0.05, 0.2],
        ..RunConfig::default()
    }
}

fn map_loop(errors: &[(f64, f64)], cap: u32) -> f64 {
    let mut total = 0.0;
    let mut bins = 0;
    let mut tau = 5;
    while tau <= cap {
        let mut hits = 0;
        for &(r, t) in errors {
            let e = if r > t { r } else { t };
            if e < tau as f64 {
                hits += 1;
            }
        }
        total += hits as f64 / errors.len() as f64;
        bins += 1;
        tau += 5;
    }
    total / bins as f64
}

proptest! {
    #[test]
    fn map_matches_threshold_loop(errors in prop::collection::vec((0.0f64..40.0, 0.0f64..40.0), 1..60)) {
        for cap in [5, 10, 20] {
            let got = evaluate_pose_map(&errors, cap).unwrap();
            prop_assert!((got - map_loop(&errors, cap)).abs() < 1e-15);
        }
        prop_assert!(evaluate_pose_map(&errors, 20).unwrap() >= 0.0);
    }

    #[test]
    fn f_score_follows_precision_and_recall(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..80)) {
        let (pred, truth): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = evaluate_classification(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
        prop_assert_eq!(m.f_score, f_score(m.precision, m.recall));
    }
}

#[test]
fn confusion_example_and_edge_cases() {
    let pred = [true, true, true, true, false, false];
    let truth = [true, true, true, false, true, true];
    let m = evaluate_classification(&pred, &truth).unwrap();
    assert_eq!((m.precision, m.recall), (0.75, 0.6));
    assert!((m.f_score - 2.0 / 3.0).abs() < 1e-15);
    let same = evaluate_classification(&truth, &truth).unwrap();
    assert_eq!((same.precision, same.recall, same.f_score), (1.0, 1.0, 1.0));
    assert_eq!(evaluate_pose_map(&[(3.0, 0.0), (12.0, 11.0)], 20).unwrap(), 0.75);
    assert_eq!(evaluate_pose_map(&[(0.0, 0.0); 3], 5).unwrap(), 1.0);
    assert_eq!(evaluate_pose_map(&[(21.0, 0.0), (0.0, 25.0)], 20).unwrap(), 0.0);
}

#[test]
fn splits_use_disjoint_seeds() {
    let run = tiny();
    let splits = Splits::generate(&run).unwrap();
    let mut seeds: Vec<u64> = splits
        .train
        .iter()
        .chain(&splits.val)
        .chain(&splits.test)
        .map(|s| s.config.seed)
        .collect();
    let total = seeds.len();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), total);
    for data_seed in [0, 1, 7] {
        let bases: Vec<u64> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| split_base_seed(data_seed, s))
            .collect();
        assert!(bases.windows(2).all(|w| w[1] - w[0] == 1_000_000));
        assert_eq!(split_base_seed(data_seed + 1, Split::Train), bases[2] + 1_000_000);
    }
}

#[test]
fn training_is_deterministic_and_reports_are_consistent() {
    let run = tiny();
    let splits = Splits::generate(&run).unwrap();
    let a = train(&run, &splits).unwrap();
    let b = train(&run, &splits).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 3);
    assert!(a.curve[1].val_f_score.is_some() && a.curve[2].val_f_score.is_some());
    assert!(a.curve[0].val_f_score.is_none());
    assert_eq!(a.curve[0].delta, 0.0, "regression is off during warm-up");

    let ra = evaluate_model(&a.net, &splits.test, &run).unwrap();
    let rb = evaluate_model(&b.net, &splits.test, &run).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(ra.per_scene.len(), 3);
    assert_eq!(ra.f_score, f_score(ra.precision, ra.recall));
    assert!(ra.config.get("out_dir").is_none());
    assert!(!serde_json::to_string(&ra).unwrap().contains("wall_time"));
}

#[test]
fn single_step_training_writes_a_loadable_checkpoint() {
    let mut run = tiny();
    run.steps = 1;
    let splits = Splits::generate(&run).unwrap();
    let out = train(&run, &splits).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&out.net, dir.path()).unwrap();
    let back = load_model(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(back.config, out.net.config);
    for id in out.net.store.ids() {
        assert_eq!(back.store.get(id).data(), out.net.store.get(id).data());
    }
    let csv = curve_csv(&out.curve).unwrap();
    assert!(csv.starts_with("step,delta,loss,classification,regression,val_f_score,val_map5,val_map20\n"));
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let mut run = tiny();
    run.lr = 1e300;
    run.steps = 4;
    let splits = Splits::generate(&run).unwrap();
    match train(&run, &splits) {
        Err(HarnessError::Diverged { step, detail }) => {
            assert!(step >= 1, "the first step starts from finite parameters");
            assert!(!detail.is_empty());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.curve)),
    }
}

#[test]
fn ransac_baseline_on_easy_scenes() {
    let mut run = tiny();
    run.scene = SceneConfig {
        n_correspondences: 200,
        outlier_ratio: 0.0,
        noise_sigma: 0.0,
        ..SceneConfig::default()
    };
    let scenes = generate_split(&run.scene, 5, 100).unwrap();
    let clean = evaluate_ransac(&scenes, &run).unwrap();
    assert_eq!((clean.precision, clean.recall, clean.f_score), (1.0, 1.0, 1.0));
    let again = evaluate_ransac(&scenes, &run).unwrap();
    assert_eq!(serde_json::to_string(&clean).unwrap(), serde_json::to_string(&again).unwrap());

    run.scene.outlier_ratio = 0.7;
    run.scene.n_correspondences = 300;
    run.ransac_iterations = 200_000;
    let hard = generate_split(&run.scene, 6, 200).unwrap();
    let report = evaluate_ransac(&hard, &run).unwrap();
    assert!(report.f_score >= 0.99, "F = {}", report.f_score);
}

#[test]
fn ablation_has_the_five_rows() {
    let mut lab = Lab::new(&tiny()).unwrap();
    let table = run_ablation(&mut lab).unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["IPS", "IPS+GCET", "IPS+GCGT-P", "IPS+GCGT-W", "IPS+GCET+GCGT-W"]);
    assert_eq!(table.rows[0].attention_parameters, 0);
    assert!(table.rows[1..].iter().all(|r| r.attention_parameters > 0));
    assert!(table.rows[2].parameters < table.rows[3].parameters, "the filter adds parameters");
    assert!(table.rows.iter().all(|r| r.results.seeds == [4]));
    let csv = ablation_csv(&table).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("variant,seed,map5,map20,f_score\n"));
}

#[test]
fn sweep_echoes_rates_in_order() {
    let mut run = tiny();
    run.rates = vec![0.5, 0.05, 0.2];
    run.net.variant = Variant::IpsGcgtW;
    let mut lab = Lab::new(&run).unwrap();
    let table = sweep_sampling_rate(&mut lab).unwrap();
    assert_eq!(table.rates, run.rates);
    assert_eq!(table.rows.iter().map(|r| r.sr).collect::<Vec<_>>(), run.rates);
    let csv = sweep_csv(&table).unwrap();
    assert!(csv.starts_with("# rates: 0.5,0.05,0.2\nsr,seed,map5,map20,f_score\n"));
    let srs: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(srs, ["0.5", "0.5", "0.05", "0.05", "0.2", "0.2"]);
    let svg = sweep_svg(&table);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn lab_reuses_finished_trials() {
    let mut lab = Lab::new(&tiny()).unwrap();
    let first = lab.trial(Variant::Ips, 0.2, 4).unwrap().curve.clone();
    let start = std::time::Instant::now();
    let second = lab.trial(Variant::Ips, 0.2, 4).unwrap().curve.clone();
    assert_eq!(first, second);
    assert!(start.elapsed().as_millis() < 50);
}
