//! Small building blocks shared by the learned modules.

use crate::tensor::{Init, ParamId, ParamStore, Result, Session, TensorError, Var};

/// Variance floor of the per-token normalization.
pub const TOKEN_NORM_EPS: f64 = 1e-5;
/// Variance floor of context normalization.
pub const CONTEXT_NORM_EPS: f64 = 1e-10;

/// Hierarchical parameter naming while a model is being assembled.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn root(store: &'a mut ParamStore) -> Self {
        Self {
            store,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: self.path(name),
            store: self.store,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let path = self.path(name);
        self.store.add(path, shape, init)
    }

    pub fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let mut s = self.sub(name);
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: s.param("w", &[in_dim, out_dim], Init::Uniform(bound)),
            b: s.param("b", &[out_dim], Init::Uniform(bound)),
            in_dim,
            out_dim,
        }
    }
}

/// Affine map over the last axis: `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn forward<'g>(&self, s: &Session<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let last = *shape.last().unwrap_or(&0);
        if last != self.in_dim {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: vec![self.in_dim, self.out_dim],
            });
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 { x } else { x.reshape(&[rows, last])? };
        let y = flat.matmul(s.param(self.w))?.add(s.param(self.b))?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.out_dim;
            y.reshape(&out)
        }
    }
}

/// Normalizes `axis` to zero mean and unit variance: `(x − μ)/√(var + eps)`.
pub fn standardize<'g>(x: Var<'g>, axis: usize, eps: f64) -> Result<Var<'g>> {
    let centered = x.sub(x.mean_axis(axis)?)?;
    let var = centered.square().mean_axis(axis)?;
    centered.div(var.add_scalar(eps).sqrt())
}

/// Per-token normalization across channels of an `n×d` map.
pub fn token_norm<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let last = x.shape().len() - 1;
    standardize(x, last, TOKEN_NORM_EPS)
}

/// Per-channel normalization across the `n` correspondences of an `n×d` map.
pub fn context_norm<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let n = x.shape()[0];
    if n < 2 {
        return Err(TensorError::Invalid(format!(
            "context normalization needs at least 2 rows, got {n}"
        )));
    }
    standardize(x, 0, CONTEXT_NORM_EPS)
}

/// Indices of the `count` largest values, descending, ties to the lower index.
pub fn top_indices(values: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}
