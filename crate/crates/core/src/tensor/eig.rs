//! Smallest-eigenvector operation used by the differentiable eight-point solver.

use nalgebra::DMatrix;

use super::{Result, TensorError};

/// Relative eigen-gap under which a pair of eigenvalues is treated as repeated
/// and excluded from the derivative.
const GAP_EPS: f64 = 1e-14;

/// Returns `(v_min, eigenvalues ascending, eigenvectors column-major in that order)`.
pub(super) fn sym_eig_min_forward(n: usize, m: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mat = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i * n + j] + m[j * n + i]));
    if !mat.iter().all(|v| v.is_finite()) {
        return Err(TensorError::Invalid("sym_eig_min: non-finite input".into()));
    }
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &c in &order {
        let col = eig.eigenvectors.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.extend(col.iter().map(|v| v * sign));
    }
    Ok((vectors[..n].to_vec(), values, vectors))
}

/// Accumulates dL/dM for `v = eigvec_min(sym(M))`.
///
/// For a simple eigenvalue, `dv = Σ_{j>0} u_j (u_jᵀ dS v) / (λ₀ − λ_j)` with
/// `S = (M + Mᵀ)/2`, hence `dL/dS = Σ_j c_j u_j vᵀ` with `c_j = u_jᵀg / (λ₀ − λ_j)`,
/// then symmetrised for `M`.
pub(super) fn sym_eig_min_backward(n: usize, values: &[f64], vectors: &[f64], g: &[f64], dm: &mut [f64]) {
    let v = &vectors[..n];
    let scale = values.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n];
    for j in 1..n {
        let gap = values[0] - values[j];
        if gap.abs() <= GAP_EPS * scale {
            continue;
        }
        let u = &vectors[j * n..(j + 1) * n];
        let c = u.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / gap;
        for (wi, ui) in w.iter_mut().zip(u) {
            *wi += c * ui;
        }
    }
    for a in 0..n {
        for b in 0..n {
            dm[a * n + b] += 0.5 * (w[a] * v[b] + w[b] * v[a]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_picks_smallest_axis() {
        let m = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let (v, vals, _) = sym_eig_min_forward(3, &m).unwrap();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
        assert_eq!(v, vec![0.0, 1.0, 0.0]);
    }
}
