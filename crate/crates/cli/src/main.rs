use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gctnet::harness::{
    self, ablation_csv, curve_csv, evaluate_model, evaluate_ransac, load_model, run_ablation, save_model, sweep_csv,
    sweep_svg, sweep_sampling_rate, train, write_json, Lab, Mode, RunConfig, Splits,
};
use gctnet::network::GctNet;
use gctnet::scene::{read_scenes, write_scene};

#[derive(Parser, Debug)]
#[command(name = "gctnet", version, about = "Correspondence pruning with graph-context transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train a model and evaluate it on the test split.
    Train,
    /// Evaluate a checkpoint (or the untrained model) on the test split.
    Eval,
    /// Train and evaluate the five component variants over several seeds.
    Ablate,
    /// Train and evaluate the model at several guidance sampling rates.
    SweepSr,
    /// Evaluate RANSAC on the test split, side by side with a checkpoint if given.
    Baseline,
    /// Write the train, validation and test scenes to disk.
    GenData,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    /// Full-width network, batches of 32.
    Paper,
    /// Narrow network and single-scene batches for one CPU core.
    Desk,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Starting point before any override.
    #[arg(long, value_enum, default_value_t = Preset::Desk, global = true)]
    preset: Preset,
    /// File of `key = value` lines applied after the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, applied after the config file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_seed: Option<u64>,
    #[arg(long, global = true)]
    n_train: Option<usize>,
    #[arg(long, global = true)]
    n_val: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    #[arg(long, global = true)]
    val_every: Option<usize>,
    /// Model seeds of `ablate` and `sweep-sr`, comma separated.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Option<Vec<u64>>,
    /// Sampling rates of `sweep-sr`, comma separated.
    #[arg(long, value_delimiter = ',', global = true)]
    rates: Option<Vec<f64>>,
    /// One of ips, ips-gcet, ips-gcgt-p, ips-gcgt-w, full.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    sr: Option<f64>,
    #[arg(long, global = true)]
    clusters: Option<usize>,
    #[arg(long, global = true)]
    n_correspondences: Option<usize>,
    #[arg(long, global = true)]
    outlier_ratio: Option<f64>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

fn mode_of(c: Command) -> Mode {
    match c {
        Command::Train => Mode::Train,
        Command::Eval => Mode::Eval,
        Command::Ablate => Mode::Ablate,
        Command::SweepSr => Mode::SweepSr,
        Command::Baseline => Mode::Baseline,
        Command::GenData => Mode::GenData,
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut run = match c.preset {
        Preset::Paper => RunConfig::default(),
        Preset::Desk => RunConfig::desk(),
    };
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        run.apply_text(&text)?;
    }
    let flags: Vec<(&str, Option<String>)> = vec![
        ("out_dir", c.out.as_ref().map(|p| p.display().to_string())),
        ("checkpoint", c.checkpoint.as_ref().map(|p| p.display().to_string())),
        ("steps", c.steps.map(|v| v.to_string())),
        ("batch_size", c.batch_size.map(|v| v.to_string())),
        ("lr", c.lr.map(|v| v.to_string())),
        ("seed", c.seed.map(|v| v.to_string())),
        ("data_seed", c.data_seed.map(|v| v.to_string())),
        ("n_train", c.n_train.map(|v| v.to_string())),
        ("n_val", c.n_val.map(|v| v.to_string())),
        ("n_test", c.n_test.map(|v| v.to_string())),
        ("val_every", c.val_every.map(|v| v.to_string())),
        ("seeds", c.seeds.as_ref().map(|v| format!("{v:?}"))),
        ("rates", c.rates.as_ref().map(|v| format!("{v:?}"))),
        ("net.variant", c.variant.clone()),
        ("net.d", c.d.map(|v| v.to_string())),
        ("net.k", c.k.map(|v| v.to_string())),
        ("net.sr", c.sr.map(|v| v.to_string())),
        ("net.clusters", c.clusters.map(|v| v.to_string())),
        ("scene.n_correspondences", c.n_correspondences.map(|v| v.to_string())),
        ("scene.outlier_ratio", c.outlier_ratio.map(|v| v.to_string())),
        ("scene.noise_sigma", c.noise_sigma.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            run.set(key, &v)?;
        }
    }
    for pair in &c.set {
        let Some((k, v)) = pair.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{pair}`");
        };
        run.set(k.trim(), v.trim())?;
    }
    run.mode = mode_of(cli.command);
    run.apply_env();
    run.validate()?;
    Ok(run)
}

fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    write_json(&dir.join("timing.json"), &json!({ "wall_time": seconds }))?;
    Ok(())
}

fn model_for(run: &RunConfig) -> Result<GctNet> {
    match &run.checkpoint {
        Some(path) => load_model(path).with_context(|| format!("loading {}", path.display())),
        None => Ok(GctNet::new(run.net, run.seed)?),
    }
}

fn execute(command: Command, run: &RunConfig) -> Result<()> {
    let out = &run.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("run.cfg"), run.to_text())?;
    let start = Instant::now();
    match command {
        Command::Train => {
            let splits = Splits::generate(run)?;
            let outcome = train(run, &splits)?;
            save_model(&outcome.net, out)?;
            std::fs::write(out.join("curve.csv"), curve_csv(&outcome.curve)?)?;
            let report = evaluate_model(&outcome.net, &splits.test, run)?;
            write_json(&out.join("report.json"), &report)?;
            println!(
                "{}: test P {:.4} R {:.4} F {:.4} mAP5 {:.4} mAP20 {:.4}",
                report.method, report.precision, report.recall, report.f_score, report.map5, report.map20
            );
        }
        Command::Eval => {
            let net = model_for(run)?;
            let report = evaluate_model(&net, &Splits::test_only(run)?, run)?;
            write_json(&out.join("report.json"), &report)?;
            println!(
                "{}: P {:.4} R {:.4} F {:.4} mAP5 {:.4} mAP20 {:.4}",
                report.method, report.precision, report.recall, report.f_score, report.map5, report.map20
            );
        }
        Command::Ablate => {
            let mut lab = Lab::new(run)?;
            let table = run_ablation(&mut lab)?;
            write_json(&out.join("report.json"), &table)?;
            std::fs::write(out.join("ablation.csv"), ablation_csv(&table)?)?;
            for row in &table.rows {
                println!(
                    "{:<16} params {:>7} (attention {:>6})  median mAP5 {:.4}  mAP20 {:.4}  F {:.4}",
                    row.label,
                    row.parameters,
                    row.attention_parameters,
                    row.results.median_map5,
                    row.results.median_map20,
                    row.results.median_f_score
                );
            }
        }
        Command::SweepSr => {
            let mut lab = Lab::new(run)?;
            let table = sweep_sampling_rate(&mut lab)?;
            write_json(&out.join("report.json"), &table)?;
            std::fs::write(out.join("curve.csv"), sweep_csv(&table)?)?;
            std::fs::write(out.join("plot.svg"), sweep_svg(&table))?;
            for row in &table.rows {
                println!(
                    "sr {:<5} median mAP5 {:.4}  mAP20 {:.4}  F {:.4}",
                    row.sr, row.results.median_map5, row.results.median_map20, row.results.median_f_score
                );
            }
        }
        Command::Baseline => {
            let test = Splits::test_only(run)?;
            let ransac = evaluate_ransac(&test, run)?;
            let model = match &run.checkpoint {
                Some(_) => Some(evaluate_model(&model_for(run)?, &test, run)?),
                None => None,
            };
            write_json(&out.join("report.json"), &json!({ "ransac": ransac, "model": model }))?;
            println!(
                "RANSAC: P {:.4} R {:.4} F {:.4} mAP5 {:.4} mAP20 {:.4}",
                ransac.precision, ransac.recall, ransac.f_score, ransac.map5, ransac.map20
            );
        }
        Command::GenData => {
            let splits = Splits::generate(run)?;
            for (name, scenes) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                let path = out.join(format!("{name}.scenes"));
                let mut w = BufWriter::new(File::create(&path)?);
                for s in scenes.iter() {
                    write_scene(&mut w, s)?;
                }
                drop(w);
                let back = read_scenes(&mut BufReader::new(File::open(&path)?))?;
                if back.len() != scenes.len() {
                    bail!("{}: wrote {} scenes, read back {}", path.display(), scenes.len(), back.len());
                }
            }
            let summary = json!({
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
                "train_base_seed": harness::split_base_seed(run.data_seed, harness::Split::Train),
                "val_base_seed": harness::split_base_seed(run.data_seed, harness::Split::Val),
                "test_base_seed": harness::split_base_seed(run.data_seed, harness::Split::Test),
            });
            write_json(&out.join("report.json"), &summary)?;
            println!("wrote {} / {} / {} scenes to {}", splits.train.len(), splits.val.len(), splits.test.len(), out.display());
        }
    }
    write_timing(out, start.elapsed().as_secs_f64())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let run = build_config(&cli)?;
    execute(cli.command, &run)
}
