use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{evaluate_classification, evaluate_pose_map, f_score};
use super::{Result, RunConfig};
use crate::geometry::{decompose_essential, pose_error, ransac_eight_point, EssentialMatrix, RansacConfig};
use crate::network::GctNet;
use crate::scene::Scene;

/// Metrics of one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub err_r: f64,
    pub err_t: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Mean over scenes.
    pub precision: f64,
    /// Mean over scenes.
    pub recall: f64,
    /// F of the mean precision and recall.
    pub f_score: f64,
    pub map5: f64,
    pub map20: f64,
    pub per_scene: Vec<SceneMetrics>,
    pub config: Value,
    /// Seconds spent producing the report. Kept out of the serialized form so
    /// reports of identical runs compare equal byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

/// The configuration as recorded in reports: everything but the output location.
pub(crate) fn snapshot(run: &RunConfig) -> Value {
    let mut v = serde_json::to_value(run).expect("config serializes");
    if let Value::Object(map) = &mut v {
        map.remove("out_dir");
    }
    v
}

pub fn summarize(method: &str, rows: Vec<SceneMetrics>, run: &RunConfig, wall_time: f64) -> Result<EvalReport> {
    let n = rows.len().max(1) as f64;
    let precision = rows.iter().map(|r| r.precision).sum::<f64>() / n;
    let recall = rows.iter().map(|r| r.recall).sum::<f64>() / n;
    let errors: Vec<(f64, f64)> = rows.iter().map(|r| (r.err_r, r.err_t)).collect();
    Ok(EvalReport {
        method: method.to_string(),
        precision,
        recall,
        f_score: f_score(precision, recall),
        map5: evaluate_pose_map(&errors, 5)?,
        map20: evaluate_pose_map(&errors, 20)?,
        per_scene: rows,
        config: snapshot(run),
        wall_time,
    })
}

/// Scores an estimate and its inlier mask against the scene's ground truth.
/// The pose is decomposed on the predicted inliers, or on every
/// correspondence when none was predicted.
fn score_scene(scene: &Scene, e: &EssentialMatrix, mask: &[bool]) -> Result<SceneMetrics> {
    let prf = evaluate_classification(mask, scene.labels())?;
    let all = vec![true; mask.len()];
    let support = if mask.iter().any(|&m| m) { mask } else { &all };
    let (err_r, err_t) = match decompose_essential(e, &scene.corrs, support) {
        Ok(est) => pose_error(&est.pose, scene.pose()),
        Err(_) => (180.0, 90.0),
    };
    Ok(SceneMetrics {
        err_r,
        err_t,
        precision: prf.precision,
        recall: prf.recall,
        f_score: prf.f_score,
    })
}

/// Evaluates `net` on every scene in parallel; rows keep scene order.
pub fn evaluate_model(net: &GctNet, scenes: &[Scene], run: &RunConfig) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let rows = scenes
        .par_iter()
        .map(|scene| {
            let (e, verification) = net.infer(&scene.corrs)?;
            score_scene(scene, &e, &verification.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(net.config.variant.label(), rows, run, start.elapsed().as_secs_f64())
}

/// RANSAC with the eight-point solver on every scene; scene `i` is sampled
/// with its own generator seed so results do not depend on scheduling.
pub fn evaluate_ransac(scenes: &[Scene], run: &RunConfig) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let rows = scenes
        .par_iter()
        .map(|scene| {
            let config = RansacConfig {
                iterations: run.ransac_iterations,
                inlier_threshold: run.net.verify_threshold,
                seed: scene.config.seed,
                ..RansacConfig::default()
            };
            let fit = ransac_eight_point(&scene.corrs, &config)?;
            score_scene(scene, &fit.e, &fit.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize("RANSAC", rows, run, start.elapsed().as_secs_f64())
}
