//! Raw kernels shared by the graph operations: broadcasting, axis splitting and GEMM.

use super::{numel, strides, Result, TensorError};

/// `C (m×n) = op(A) · op(B) (+ C when accumulate)`, where `op` is an optional transpose.
///
/// `a` is stored as `m×k` (or `k×m` when `a_t`), `b` as `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_end(a, rank - 1 - i);
        let db = dim_from_end(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_end(shape: &[usize], from_end: usize) -> usize {
    if from_end < shape.len() {
        shape[shape.len() - 1 - from_end]
    } else {
        1
    }
}

/// Maps every output element of a broadcast to its source offset in an operand.
#[derive(Debug, Clone)]
pub(crate) enum BroadcastMap {
    Identity,
    /// Source repeats with period `len` (operand equals the trailing dims).
    Cyclic(usize),
    /// Each source element repeats `inner` times (operand is a prefix of the
    /// output with trailing unit dims).
    Repeat(usize),
    /// Arbitrary pattern.
    Table(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        let src_n = numel(src);
        let out_n = numel(out);
        if src_n == out_n {
            return Self::Identity;
        }
        // Trailing-suffix operands (biases, per-channel vectors).
        let lead = out.len() - src.len();
        let trimmed: Vec<usize> = src.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.is_empty() {
            return Self::Cyclic(1);
        }
        if out[out.len() - trimmed.len()..] == trimmed[..] {
            return Self::Cyclic(src_n);
        }
        let kept = src.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if src[kept..].iter().all(|&d| d == 1) && src[..kept] == out[lead..lead + kept] && out[..lead].iter().all(|&d| d == 1) {
            return Self::Repeat(numel(&out[lead + kept..]));
        }
        let out_strides = strides(out);
        let src_strides = strides(src);
        let mut table = Vec::with_capacity(out_n);
        for i in 0..out_n {
            let mut off = 0;
            for (axis, &os) in out_strides.iter().enumerate() {
                let idx = (i / os) % out[axis];
                if axis >= lead {
                    let sa = axis - lead;
                    if src[sa] != 1 {
                        off += idx * src_strides[sa];
                    }
                }
            }
            table.push(off);
        }
        Self::Table(table)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            Self::Identity => i,
            Self::Cyclic(p) => i % p,
            Self::Repeat(inner) => i / inner,
            Self::Table(t) => t[i],
        }
    }
}

/// `(outer, len, inner)` split around `axis`.
pub(crate) fn axis_split(
    op: &'static str,
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    Ok((outer, shape[axis], inner))
}

/// Source offsets of a permuted tensor, listed in output order.
pub(crate) fn permute_table(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = numel(shape);
    let mut table = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let off: usize = (0..rank).map(|d| idx[d] * src_strides[axes[d]]).sum();
        table.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    table
}
