use nalgebra::{DMatrix, Matrix3};

use super::{CorrespondenceSet, EssentialMatrix, GeometryError, Result};

/// Relative gap between the two smallest singular values below which the
/// null vector is not unique.
const DEGENERACY_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EightPointEstimate {
    /// Null vector of the weighted design matrix, unit Frobenius norm.
    pub e: EssentialMatrix,
    /// `e` projected onto the essential manifold.
    pub projected: EssentialMatrix,
    /// Smallest singular value is (numerically) repeated.
    pub degenerate: bool,
}

/// Coefficients of `p′ᵀ E p` with respect to row-major `E`.
pub fn design_row(q: &[f64; 4]) -> [f64; 9] {
    let [x, y, xp, yp] = *q;
    [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0]
}

/// Weighted eight-point solver: rows of the epipolar design matrix are scaled
/// by their weight and the right singular vector of the smallest singular value
/// is reshaped into `E`. Rows with zero weight are dropped.
pub fn weighted_eight_point(corrs: &CorrespondenceSet, weights: &[f64]) -> Result<EightPointEstimate> {
    if weights.len() != corrs.len() {
        return Err(GeometryError::LengthMismatch {
            what: "weights",
            expected: corrs.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GeometryError::InvalidWeights);
    }
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if active.len() < 8 {
        return Err(GeometryError::RankDeficient(active.len()));
    }
    // Pad to at least 9 rows so the full right singular basis is available.
    let rows = active.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, &i) in active.iter().enumerate() {
        let row = design_row(&corrs.coords()[i]);
        for c in 0..9 {
            a[(r, c)] = weights[i] * row[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::SvdFailed)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let (smallest, second) = (order[0], order[1]);
    let degenerate = (s[second] - s[smallest]).abs() <= DEGENERACY_GAP * s[order[8]];
    let null = v_t.row(smallest);
    let e = EssentialMatrix::new(Matrix3::from_row_slice(null.transpose().as_slice()));
    Ok(EightPointEstimate {
        e,
        projected: e.project(),
        degenerate,
    })
}
