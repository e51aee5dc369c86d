use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# a deliberately small run
net.d = 8
net.heads = 2
net.r = 2
net.clusters = 4
scene.n_correspondences = 60
steps = 2
batch_size = 1
n_train = 4
n_val = 2
n_test = 3
val_every = 1
seeds = 0
rates = 0.05, 0.2
";

fn gctnet(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gctnet"));
    cmd.args(args).env_remove("GCTNET_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("GCTNET_OUT_DIR", dir);
    }
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "gctnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_then_eval_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    gctnet(&["train", "--config", &cfg, "--out", run.to_str().unwrap(), "--steps", "1"], None);
    for file in ["model.ckpt", "model.cfg", "curve.csv", "report.json", "run.cfg", "timing.json"] {
        assert!(run.join(file).exists(), "{file} missing");
    }
    assert_eq!(read(&run.join("curve.csv")).lines().count(), 2);
    assert!(read(&run.join("run.cfg")).contains("steps = 1\n"));

    let eval = tmp.path().join("eval");
    let ckpt = run.join("model.ckpt");
    gctnet(
        &["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", eval.to_str().unwrap()],
        None,
    );
    let trained: serde_json::Value = serde_json::from_str(&read(&run.join("report.json"))).unwrap();
    let evaluated: serde_json::Value = serde_json::from_str(&read(&eval.join("report.json"))).unwrap();
    assert_eq!(trained["per_scene"], evaluated["per_scene"]);
    assert_eq!(evaluated["method"], "IPS+GCET+GCGT-W");
}

#[test]
fn identical_runs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gctnet(&["train", "--config", &cfg, "--out", a.to_str().unwrap()], None);
    gctnet(&["train", "--config", &cfg], Some(&b));
    for file in ["report.json", "curve.csv", "model.cfg"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} differs");
    }
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn overrides_apply_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let flag_out = tmp.path().join("flag");
    let env_out = tmp.path().join("env");
    gctnet(
        &["gen-data", "--config", &cfg, "--n-test", "2", "--set", "n_test=1", "--out", flag_out.to_str().unwrap()],
        Some(&env_out),
    );
    assert!(!flag_out.exists(), "the environment variable wins over --out");
    let summary: serde_json::Value = serde_json::from_str(&read(&env_out.join("report.json"))).unwrap();
    assert_eq!(summary["test"], 1);
    assert_eq!(summary["train"], 4);
    assert!(read(&env_out.join("run.cfg")).contains("scene.n_correspondences = 60\n"));
    for split in ["train", "val", "test"] {
        let bytes = std::fs::read(env_out.join(format!("{split}.scenes"))).unwrap();
        assert!(!bytes.is_empty());
    }
}

#[test]
fn bad_keys_are_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_gctnet"))
        .args(["gen-data", "--set", "no_such_key=1"])
        .env("GCTNET_OUT_DIR", tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn baseline_on_clean_scenes_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("baseline");
    gctnet(
        &[
            "baseline",
            "--config",
            &cfg,
            "--outlier-ratio",
            "0",
            "--noise-sigma",
            "0",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    for key in ["precision", "recall", "f_score"] {
        assert_eq!(report["ransac"][key], 1.0, "{key}");
    }
    assert!(report["model"].is_null());
}

#[test]
fn sweep_and_ablation_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let sweep = tmp.path().join("sweep");
    gctnet(&["sweep-sr", "--config", &cfg, "--out", sweep.to_str().unwrap()], None);
    let csv = read(&sweep.join("curve.csv"));
    assert!(csv.starts_with("# rates: 0.05,0.2\n"));
    assert!(read(&sweep.join("plot.svg")).starts_with("<svg"));

    let ablate = tmp.path().join("ablate");
    let stdout = gctnet(&["ablate", "--config", &cfg, "--steps", "1", "--out", ablate.to_str().unwrap()], None).stdout;
    let table: serde_json::Value = serde_json::from_str(&read(&ablate.join("report.json"))).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 5);
    assert_eq!(String::from_utf8_lossy(&stdout).lines().count(), 5);
    assert!(ablate.join("ablation.csv").exists());
}
