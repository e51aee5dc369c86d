use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_model, EvalReport};
use super::metrics::median;
use super::train::{train, CurveRow};
use super::{Result, RunConfig, Splits};
use crate::network::{GctNet, Variant};

/// One trained model and its test reports before and after training.
#[derive(Debug, Clone)]
pub struct Trial {
    pub variant: Variant,
    pub sr: f64,
    pub seed: u64,
    pub net: GctNet,
    pub untrained: EvalReport,
    pub trained: EvalReport,
    pub curve: Vec<CurveRow>,
}

/// Shared scene splits plus a memo of finished trials, so an experiment that
/// needs the same (variant, sr, seed) twice trains it once.
#[derive(Debug)]
pub struct Lab {
    pub base: RunConfig,
    pub splits: Splits,
    trials: BTreeMap<(String, u64, u64), Trial>,
}

impl Lab {
    pub fn new(base: &RunConfig) -> Result<Self> {
        base.validate()?;
        Ok(Self {
            base: base.clone(),
            splits: Splits::generate(base)?,
            trials: BTreeMap::new(),
        })
    }

    pub fn config_for(&self, variant: Variant, sr: f64, seed: u64) -> RunConfig {
        let mut run = self.base.with_variant(variant);
        run.net.sr = sr;
        run.seed = seed;
        run
    }

    pub fn trial(&mut self, variant: Variant, sr: f64, seed: u64) -> Result<&Trial> {
        let key = (variant.label().to_string(), sr.to_bits(), seed);
        if !self.trials.contains_key(&key) {
            let run = self.config_for(variant, sr, seed);
            log::info!("training {} sr={} seed={}", variant.label(), sr, seed);
            let untrained = evaluate_model(&GctNet::new(run.net, run.seed)?, &self.splits.test, &run)?;
            let outcome = train(&run, &self.splits)?;
            let trained = evaluate_model(&outcome.net, &self.splits.test, &run)?;
            log::info!(
                "{} sr={} seed={}: F {:.4} -> {:.4}, mAP5 {:.4} -> {:.4}",
                variant.label(),
                sr,
                seed,
                untrained.f_score,
                trained.f_score,
                untrained.map5,
                trained.map5
            );
            self.trials.insert(
                key.clone(),
                Trial {
                    variant,
                    sr,
                    seed,
                    net: outcome.net,
                    untrained,
                    trained,
                    curve: outcome.curve,
                },
            );
        }
        Ok(&self.trials[&key])
    }
}

/// Per-seed test metrics of one configuration and their medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub map5: Vec<f64>,
    pub map20: Vec<f64>,
    pub f_score: Vec<f64>,
    pub untrained_f_score: Vec<f64>,
    pub median_map5: f64,
    pub median_map20: f64,
    pub median_f_score: f64,
    pub median_untrained_f_score: f64,
}

fn summarize_seeds(lab: &mut Lab, variant: Variant, sr: f64) -> Result<SeedSummary> {
    let seeds = lab.base.seeds.clone();
    let mut s = SeedSummary {
        seeds: seeds.clone(),
        map5: Vec::new(),
        map20: Vec::new(),
        f_score: Vec::new(),
        untrained_f_score: Vec::new(),
        median_map5: 0.0,
        median_map20: 0.0,
        median_f_score: 0.0,
        median_untrained_f_score: 0.0,
    };
    for seed in seeds {
        let t = lab.trial(variant, sr, seed)?;
        s.map5.push(t.trained.map5);
        s.map20.push(t.trained.map20);
        s.f_score.push(t.trained.f_score);
        s.untrained_f_score.push(t.untrained.f_score);
    }
    s.median_map5 = median(&s.map5);
    s.median_map20 = median(&s.map20);
    s.median_f_score = median(&s.f_score);
    s.median_untrained_f_score = median(&s.untrained_f_score);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub parameters: usize,
    /// Scalars inside the enhancement and guidance blocks.
    pub attention_parameters: usize,
    pub results: SeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Scalar parameters of `net` that live in the enhancement or guidance blocks.
pub fn attention_parameters(net: &GctNet) -> usize {
    net.store
        .ids()
        .filter(|&id| {
            let name = net.store.name(id);
            name.contains(".gcet.") || name.contains(".gcgt.")
        })
        .map(|id| net.store.get(id).numel())
        .sum()
}

/// Trains and evaluates the five component variants over the lab's seeds.
pub fn run_ablation(lab: &mut Lab) -> Result<AblationTable> {
    let sr = lab.base.net.sr;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let results = summarize_seeds(lab, variant, sr)?;
        let net = &lab.trial(variant, sr, lab.base.seeds[0])?.net;
        rows.push(AblationRow {
            label: variant.label().to_string(),
            variant,
            parameters: net.num_parameters(),
            attention_parameters: attention_parameters(net),
            results,
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sr: f64,
    pub results: SeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variant: Variant,
    pub rates: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

/// Trains the base variant at every sampling rate, in the given order.
pub fn sweep_sampling_rate(lab: &mut Lab) -> Result<SweepTable> {
    let variant = lab.base.net.variant;
    let rates = lab.base.rates.clone();
    let rows = rates
        .iter()
        .map(|&sr| {
            Ok(SweepRow {
                sr,
                results: summarize_seeds(lab, variant, sr)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { variant, rates, rows })
}
