use crate::scene::Scene;
use crate::tensor::{Tensor, Var};

use super::{NetError, PipelineOutput, Result};

/// Logits are clamped to this magnitude before the cross-entropy.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Per-correspondence temperature `clamp(|ed − t| / t, 0, 1)`: close to zero
/// near the labeling threshold, one far from it.
pub fn dynamic_temperature(gt_residuals: &[f64], threshold: f64) -> Vec<f64> {
    gt_residuals
        .iter()
        .map(|&ed| ((ed - threshold).abs() / threshold).clamp(0.0, 1.0))
        .collect()
}

/// Class-balanced weights: positives and negatives each carry half the mass,
/// or all of it when the other class is absent.
pub fn balanced_bce_weights(labels: &[bool]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let (wp, wn) = match (pos, neg) {
        (0, 0) => (0.0, 0.0),
        (0, n) => (0.0, 1.0 / n as f64),
        (p, 0) => (1.0 / p as f64, 0.0),
        (p, n) => (0.5 / p as f64, 0.5 / n as f64),
    };
    labels.iter().map(|&l| if l { wp } else { wn }).collect()
}

/// Sum over stages of balanced binary cross-entropy on `clamp(η⊙o, ±15)`.
pub fn classification_loss<'g>(logits: &[Var<'g>], labels: &[Vec<bool>], eta: &[Vec<f64>]) -> Result<Var<'g>> {
    if logits.len() != labels.len() || logits.len() != eta.len() {
        return Err(NetError::LengthMismatch {
            what: "stages",
            expected: logits.len(),
            actual: labels.len().min(eta.len()),
        });
    }
    let first = logits
        .first()
        .ok_or_else(|| NetError::Config("classification loss needs at least one stage".into()))?;
    let g = first.graph();
    let mut total = g.scalar(0.0);
    for ((o, y), t) in logits.iter().zip(labels).zip(eta) {
        let n = o.shape()[0];
        if y.len() != n || t.len() != n {
            return Err(NetError::LengthMismatch {
                what: "labels",
                expected: n,
                actual: if y.len() != n { y.len() } else { t.len() },
            });
        }
        let yv = g.constant(Tensor::new(&[n], y.iter().map(|&l| l as u8 as f64).collect())?);
        let tv = g.constant(Tensor::new(&[n], t.clone())?);
        let wv = g.constant(Tensor::new(&[n], balanced_bce_weights(y))?);
        let z = o.mul(tv)?.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let per_row = z.softplus().sub(z.mul(yv)?)?;
        total = total.add(per_row.mul(wv)?.sum_all())?;
    }
    Ok(total)
}

/// Mean symmetric epipolar residual of `coords` under `e_hat` (`3×3`).
pub fn regression_loss<'g>(e_hat: Var<'g>, coords: &[[f64; 4]]) -> Result<Var<'g>> {
    let g = e_hat.graph();
    let n = coords.len();
    if n == 0 {
        return Ok(g.scalar(0.0));
    }
    let p = g.constant(Tensor::new(&[n, 3], coords.iter().flat_map(|q| [q[0], q[1], 1.0]).collect())?);
    let pp = g.constant(Tensor::new(&[n, 3], coords.iter().flat_map(|q| [q[2], q[3], 1.0]).collect())?);
    // Row i of `ep` is (E pᵢ)ᵀ, row i of `etp` is (Eᵀ p′ᵢ)ᵀ.
    let ep = p.matmul(e_hat.transpose()?)?;
    let etp = pp.matmul(e_hat)?;
    let num = pp.mul(ep)?.sum_axis(1)?.square();
    let den = ep
        .narrow(1, 0, 2)?
        .square()
        .sum_axis(1)?
        .add(etp.narrow(1, 0, 2)?.square().sum_axis(1)?)?
        .clamp(1e-15, f64::INFINITY);
    Ok(num.div(den)?.mean_all())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
}

/// `L_cls + δ·L_reg` for one scene. Stage labels and temperatures are the
/// scene's ground truth restricted to each module's input rows; the regression
/// term averages over the ground-truth inliers.
pub fn hybrid_loss<'g>(
    out: &PipelineOutput<'g>,
    scene: &Scene,
    delta: f64,
    label_threshold: f64,
) -> Result<(Var<'g>, LossBreakdown)> {
    let labels: Vec<Vec<bool>> = out
        .inputs
        .iter()
        .map(|rows| rows.iter().map(|&i| scene.gt_residuals[i] < label_threshold).collect())
        .collect();
    let eta: Vec<Vec<f64>> = out
        .inputs
        .iter()
        .map(|rows| {
            let ed: Vec<f64> = rows.iter().map(|&i| scene.gt_residuals[i]).collect();
            dynamic_temperature(&ed, label_threshold)
        })
        .collect();
    let cls = classification_loss(&out.logits, &labels, &eta)?;
    let breakdown_cls = cls.item();
    if delta == 0.0 {
        return Ok((
            cls,
            LossBreakdown {
                total: breakdown_cls,
                classification: breakdown_cls,
                regression: 0.0,
            },
        ));
    }
    let inliers: Vec<[f64; 4]> = scene
        .corrs
        .coords()
        .iter()
        .zip(&scene.gt_residuals)
        .filter(|(_, &r)| r < label_threshold)
        .map(|(q, _)| *q)
        .collect();
    let reg = regression_loss(out.e_hat, &inliers)?;
    let total = cls.add(reg.scale(delta))?;
    Ok((
        total,
        LossBreakdown {
            total: total.item(),
            classification: breakdown_cls,
            regression: reg.item(),
        },
    ))
}
