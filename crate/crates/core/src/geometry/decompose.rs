use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{CorrespondenceSet, EssentialMatrix, GeometryError, Pose, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Masked correspondences triangulated in front of both cameras.
    pub positive_depth: usize,
    /// No candidate put a strict majority of the masked points in front of both cameras.
    pub ambiguous: bool,
}

/// Depths `(λ₁, λ₂)` minimizing `‖λ₂ p′ − (λ₁ R p + t)‖`.
fn depths(r: &Matrix3<f64>, t: &Vector3<f64>, q: &[f64; 4]) -> Option<(f64, f64)> {
    let a = r * Vector3::new(q[0], q[1], 1.0);
    let b = -Vector3::new(q[2], q[3], 1.0);
    // Normal equations of [a b]·λ = −t.
    let ata = Matrix2::new(a.dot(&a), a.dot(&b), a.dot(&b), b.dot(&b));
    let rhs = Vector2::new(-a.dot(t), -b.dot(t));
    let sol = ata.try_inverse()? * rhs;
    Some((sol.x, sol.y))
}

/// Recovers `(R, t)` from `e`, choosing among the four decompositions the one
/// that places the most masked correspondences in front of both cameras.
pub fn decompose_essential(
    e: &EssentialMatrix,
    corrs: &CorrespondenceSet,
    mask: &[bool],
) -> Result<PoseEstimate> {
    if mask.len() != corrs.len() {
        return Err(GeometryError::LengthMismatch {
            what: "mask",
            expected: corrs.len(),
            actual: mask.len(),
        });
    }
    let points: Vec<&[f64; 4]> = corrs
        .coords()
        .iter()
        .zip(mask)
        .filter_map(|(q, &m)| m.then_some(q))
        .collect();
    if points.is_empty() {
        return Err(GeometryError::NoInliers);
    }
    let svd = e.matrix().svd(true, true);
    let (mut u, mut v_t) = (svd.u.ok_or(GeometryError::SvdFailed)?, svd.v_t.ok_or(GeometryError::SvdFailed)?);
    // Reorder so the smallest singular value is last.
    let s = svd.singular_values;
    let smallest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
    if smallest != 2 {
        u.swap_columns(smallest, 2);
        v_t.swap_rows(smallest, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t),
        (u * w * v_t, -t),
        (u * w.transpose() * v_t, t),
        (u * w.transpose() * v_t, -t),
    ];
    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for (r, t) in candidates {
        let count = points
            .iter()
            .filter(|q| matches!(depths(&r, &t, q), Some((l1, l2)) if l1 > 0.0 && l2 > 0.0))
            .count();
        if best.as_ref().map_or(true, |(c, _, _)| count > *c) {
            best = Some((count, r, t));
        }
    }
    let (count, r, t) = best.expect("four candidates");
    Ok(PoseEstimate {
        pose: Pose::new(r, t)?,
        positive_depth: count,
        ambiguous: 2 * count <= points.len(),
    })
}
