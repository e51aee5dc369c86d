use nalgebra::{Matrix3, SMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    design_row, symmetric_epipolar_residual, weighted_eight_point, CorrespondenceSet, EssentialMatrix,
    GeometryError, Result, DEFAULT_INLIER_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Upper bound on hypotheses.
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
    /// Stop early once this confidence of having drawn an all-inlier sample is reached.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            seed: 0,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub e: EssentialMatrix,
    pub mask: Vec<bool>,
    pub iterations: usize,
    /// The best hypothesis gathered fewer than eight inliers.
    pub low_confidence: bool,
}

const SAMPLE: usize = 8;

fn minimal_solve(coords: &[[f64; 4]], sample: &[usize]) -> Option<EssentialMatrix> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (r, &i) in sample.iter().enumerate() {
        let row = design_row(&coords[i]);
        for c in 0..9 {
            a[(r, c)] = row[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let smallest = (0..9).min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))?;
    let row = v_t.row(smallest);
    let m = Matrix3::from_row_slice(row.transpose().as_slice());
    m.iter().all(|v| v.is_finite()).then(|| EssentialMatrix::new(m).project())
}

fn median_residual(e: &EssentialMatrix, coords: &[[f64; 4]], mask: &[bool]) -> f64 {
    let mut r: Vec<f64> = coords
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(q, _)| symmetric_epipolar_residual(e.matrix(), q))
        .collect();
    r.sort_by(f64::total_cmp);
    r.get(r.len() / 2).copied().unwrap_or(f64::INFINITY)
}

/// Inlier count, mask and truncated cost `Σ min(r, threshold)`.
fn score(e: &EssentialMatrix, coords: &[[f64; 4]], threshold: f64) -> (usize, Vec<bool>, f64) {
    let mut cost = 0.0;
    let mask: Vec<bool> = coords
        .iter()
        .map(|q| {
            let r = symmetric_epipolar_residual(e.matrix(), q);
            cost += r.min(threshold);
            r < threshold
        })
        .collect();
    (mask.iter().filter(|&&m| m).count(), mask, cost)
}

/// Hypothesize-and-verify with the eight-point minimal solver, followed by a
/// least-squares refit on the consensus set. Hypotheses are ranked by
/// truncated residual cost, then by inlier count. Deterministic for a given seed.
pub fn ransac_eight_point(corrs: &CorrespondenceSet, config: &RansacConfig) -> Result<RansacResult> {
    let n = corrs.len();
    if n < SAMPLE {
        return Err(GeometryError::RankDeficient(n));
    }
    let coords = corrs.coords();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, EssentialMatrix, Vec<bool>, f64)> = None;
    let mut budget = config.iterations.max(1);
    let mut it = 0;
    while it < budget {
        it += 1;
        let sample = rand::seq::index::sample(&mut rng, n, SAMPLE).into_vec();
        let Some(e) = minimal_solve(coords, &sample) else { continue };
        let (count, mask, cost) = score(&e, coords, config.inlier_threshold);
        let better = best
            .as_ref()
            .map_or(true, |&(c, _, _, k)| cost < k || (cost == k && count > c));
        if better {
            let ratio = count as f64 / n as f64;
            let p_good = ratio.powi(SAMPLE as i32);
            if p_good >= 1.0 {
                budget = it;
            } else if p_good > 0.0 {
                let needed = ((1.0 - config.confidence).ln() / (1.0 - p_good).ln()).ceil();
                if needed.is_finite() && (needed as usize) < budget {
                    budget = (needed as usize).max(it);
                }
            }
            best = Some((count, e, mask, cost));
        }
    }
    let (mut count, mut e, mut mask, _) = best.ok_or(GeometryError::SvdFailed)?;
    // A chance outlier just under the threshold pulls a least-squares refit
    // off an exact hypothesis, so the refit must not worsen the median.
    if count >= SAMPLE {
        let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        if let Ok(refit) = weighted_eight_point(corrs, &weights) {
            let (c2, m2, _) = score(&refit.projected, coords, config.inlier_threshold);
            if c2 >= count && median_residual(&refit.projected, coords, &mask) <= median_residual(&e, coords, &mask) {
                count = c2;
                e = refit.projected;
                mask = m2;
            }
        }
    }
    Ok(RansacResult {
        e,
        mask,
        iterations: it,
        low_confidence: count < SAMPLE,
    })
}

/// RANSAC on the rows that pass `keep`, for callers that can reject outliers
/// beforehand (a descriptor ratio test, for instance). Rejected rows are
/// reported as outliers in the returned mask.
pub fn ransac_with_prefilter(corrs: &CorrespondenceSet, keep: &[bool], config: &RansacConfig) -> Result<RansacResult> {
    if keep.len() != corrs.len() {
        return Err(GeometryError::LengthMismatch {
            what: "prefilter",
            expected: corrs.len(),
            actual: keep.len(),
        });
    }
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let fit = ransac_eight_point(&corrs.select(&rows), config)?;
    let mut mask = vec![false; corrs.len()];
    for (&i, &m) in rows.iter().zip(&fit.mask) {
        mask[i] = m;
    }
    Ok(RansacResult { mask, ..fit })
}
