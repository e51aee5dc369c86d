use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};

/// Precision, recall and F-score of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl Prf {
    /// Builds the triple from `precision` and `recall`, deriving F.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f_score: f_score(precision, recall),
        }
    }
}

/// `2PR/(P+R)`, zero when both vanish.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn evaluate_classification(pred: &[bool], truth: &[bool]) -> Result<Prf> {
    if pred.len() != truth.len() {
        return Err(HarnessError::Metric(format!(
            "prediction has {} entries, labels have {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(Prf::from_pr(ratio(tp, tp + fp), ratio(tp, tp + fn_)))
}

/// Mean accuracy over the thresholds `5°, 10°, …, cap` where a scene counts
/// as accurate when `max(err_R, err_t)` is below the threshold.
pub fn evaluate_pose_map(errors: &[(f64, f64)], cap: u32) -> Result<f64> {
    if errors.is_empty() {
        return Err(HarnessError::Metric("mAP of an empty error list".into()));
    }
    if cap < 5 || cap % 5 != 0 {
        return Err(HarnessError::Metric(format!("mAP cap {cap} is not a positive multiple of 5")));
    }
    let worst: Vec<f64> = errors.iter().map(|&(r, t)| r.max(t)).collect();
    let bins: Vec<f64> = (1..=cap / 5).map(|b| (5 * b) as f64).collect();
    let acc_sum: f64 = bins
        .iter()
        .map(|&tau| worst.iter().filter(|&&e| e < tau).count() as f64 / worst.len() as f64)
        .sum();
    Ok(acc_sum / bins.len() as f64)
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
