use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate_model;
use super::{HarnessError, Result, RunConfig, Splits};
use crate::network::{hybrid_loss, GctNet};
use crate::tensor::{Adam, AdamConfig, Graph, Session};

/// One line of the training curve. Validation columns are filled on
/// validation steps only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub delta: f64,
    pub loss: f64,
    pub classification: f64,
    pub regression: f64,
    pub val_f_score: Option<f64>,
    pub val_map5: Option<f64>,
    pub val_map20: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: GctNet,
    pub curve: Vec<CurveRow>,
}

/// Cycles through the training scenes in a fresh random order every epoch.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { rng, order, cursor: 0 }
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

/// Adam on the hybrid loss, gradients averaged over `batch_size` scenes per
/// step. Stops with [`HarnessError::Diverged`] on a non-finite loss or gradient.
pub fn train(run: &RunConfig, splits: &Splits) -> Result<TrainOutcome> {
    run.validate()?;
    let mut net = GctNet::new(run.net, run.seed)?;
    let mut adam = Adam::new(
        &net.store,
        AdamConfig {
            lr: run.lr,
            ..AdamConfig::default()
        },
    );
    let mut batches = BatchOrder::new(splits.train.len(), run.seed);
    let mut curve = Vec::with_capacity(run.steps);
    let scale = 1.0 / run.batch_size as f64;

    for step in 0..run.steps {
        let delta = run.net.delta_at(step, run.steps);
        let mut grads = net.store.zero_grads();
        let (mut loss, mut cls, mut reg) = (0.0, 0.0, 0.0);
        for _ in 0..run.batch_size {
            let scene = &splits.train[batches.next()];
            let g = Graph::new();
            let s = Session::new(&g, &net.store);
            let out = net.forward(&s, &scene.corrs)?;
            let (total, parts) = hybrid_loss(&out, scene, delta, run.net.label_threshold)?;
            if !parts.total.is_finite() {
                return Err(HarnessError::Diverged {
                    step,
                    detail: format!(
                        "loss {} (classification {}, regression {}) on scene seed {}",
                        parts.total, parts.classification, parts.regression, scene.config.seed
                    ),
                });
            }
            let scene_grads = g.backward(total.scale(scale))?;
            s.accumulate_grads(&scene_grads, &mut grads);
            loss += parts.total * scale;
            cls += parts.classification * scale;
            reg += parts.regression * scale;
        }
        adam.step(&mut net.store, &grads).map_err(|e| HarnessError::Diverged {
            step,
            detail: e.to_string(),
        })?;

        let mut row = CurveRow {
            step: step + 1,
            delta,
            loss,
            classification: cls,
            regression: reg,
            val_f_score: None,
            val_map5: None,
            val_map20: None,
        };
        let last = step + 1 == run.steps;
        if !splits.val.is_empty() && run.val_every > 0 && ((step + 1) % run.val_every == 0 || last) {
            let report = evaluate_model(&net, &splits.val, run)?;
            row.val_f_score = Some(report.f_score);
            row.val_map5 = Some(report.map5);
            row.val_map20 = Some(report.map20);
            log::info!(
                "step {:>6}  loss {:.5}  val F {:.4}  mAP5 {:.4}",
                step + 1,
                loss,
                report.f_score,
                report.map5
            );
        }
        curve.push(row);
    }
    Ok(TrainOutcome { net, curve })
}
