//! Neighborhood graphs over correspondence features and the two graph-context
//! branches built on them.
//!
//! The credible branch runs a shared edge MLP, max-pools over the neighbors and
//! applies a second MLP; it ignores neighbor order. The structure branch groups
//! distance-ordered neighbors in blocks of `p`, maps each block, and then
//! collapses the `k/p` blocks with a second learned map, so it is order sensitive.

use thiserror::Error;

use crate::layers::{Linear, Scope};
use crate::tensor::{Result as TResult, Session, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphContextError {
    #[error("knn needs more points than neighbors: n = {n}, k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("neighbor count {k} is not divisible by group width {p}")]
    GroupWidth { k: usize, p: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GraphContextError>;

/// Self-excluding `k` nearest neighbors of every row of a row-major `n×d`
/// matrix under Euclidean distance, nearest first, ties to the lower index.
pub fn knn_indices(features: &[f64], n: usize, d: usize, k: usize) -> Result<Vec<usize>> {
    if n <= k || k == 0 {
        return Err(GraphContextError::TooFewPoints { n, k });
    }
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let fi = &features[i * d..(i + 1) * d];
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let fj = &features[j * d..(j + 1) * d];
            let dist: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((dist, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let nearest = &mut cand[..k];
        nearest.sort_by(cmp);
        out.extend(nearest.iter().map(|c| c.1));
    }
    Ok(out)
}

/// A KNN graph over a feature map, with its edge features `[n, k, 2d]`.
#[derive(Debug, Clone)]
pub struct KnnGraph<'g> {
    pub n: usize,
    pub k: usize,
    /// Row-major `n×k` neighbor indices.
    pub neighbors: Vec<usize>,
    /// Row `(i, j)` holds `[f_i ‖ f_i − f_{neighbors[i][j]}]`.
    pub edges: Var<'g>,
}

impl KnnGraph<'_> {
    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}

/// Builds the graph on the current values of `features` (`n×d`). Neighbor
/// selection is not differentiated; edge features are.
pub fn build_knn_graph<'g>(features: Var<'g>, k: usize) -> Result<KnnGraph<'g>> {
    let shape = features.shape();
    let (n, d) = (shape[0], shape[1]);
    let neighbors = features.with_data(|f| knn_indices(f, n, d, k))?;
    edges_from_neighbors(features, neighbors, k)
}

/// Edge features for an explicit neighbor table.
pub fn edges_from_neighbors<'g>(features: Var<'g>, neighbors: Vec<usize>, k: usize) -> Result<KnnGraph<'g>> {
    let shape = features.shape();
    let (n, d) = (shape[0], shape[1]);
    if neighbors.len() != n * k {
        return Err(TensorError::ShapeMismatch {
            op: "edges_from_neighbors",
            lhs: vec![neighbors.len()],
            rhs: vec![n, k],
        }
        .into());
    }
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let own = features.gather_rows(&centers)?;
    let diff = own.sub(features.gather_rows(&neighbors)?)?;
    let edges = features.graph().concat(&[own, diff], 1)?.reshape(&[n, k, 2 * d])?;
    Ok(KnnGraph { n, k, neighbors, edges })
}

/// Credible graph context: `post(maxpool_k(relu(pre(E))))`.
#[derive(Debug, Clone, Copy)]
pub struct CredibleContext {
    pub pre: Linear,
    pub post: Linear,
}

impl CredibleContext {
    pub fn new(scope: &mut Scope<'_>, d: usize) -> Self {
        Self {
            pre: scope.linear("pre", 2 * d, d),
            post: scope.linear("post", d, d),
        }
    }

    pub fn forward<'g>(&self, s: &Session<'g>, graph: &KnnGraph<'g>) -> TResult<Var<'g>> {
        let h = self.pre.forward(s, graph.edges)?.relu();
        let (pooled, _) = h.max_axis(1)?;
        let d = self.pre.out_dim;
        self.post.forward(s, pooled.reshape(&[graph.n, d])?)
    }
}

/// Structure graph context: a width-`p` stride-`p` map over the ordered
/// neighbor axis, then a width-`k/p` map collapsing the groups.
#[derive(Debug, Clone, Copy)]
pub struct StructureContext {
    pub k: usize,
    pub p: usize,
    pub conv1: Linear,
    pub conv2: Linear,
}

impl StructureContext {
    pub fn new(scope: &mut Scope<'_>, d: usize, k: usize, p: usize) -> Result<Self> {
        if p == 0 || k % p != 0 {
            return Err(GraphContextError::GroupWidth { k, p });
        }
        Ok(Self {
            k,
            p,
            conv1: scope.linear("conv1", p * 2 * d, d),
            conv2: scope.linear("conv2", (k / p) * d, d),
        })
    }

    /// Number of groups after the first map.
    pub fn groups(&self) -> usize {
        self.k / self.p
    }

    pub fn forward<'g>(&self, s: &Session<'g>, graph: &KnnGraph<'g>) -> Result<Var<'g>> {
        if graph.k != self.k {
            return Err(GraphContextError::GroupWidth { k: graph.k, p: self.p });
        }
        let d = self.conv1.out_dim;
        let grouped = graph.edges.reshape(&[graph.n, self.groups(), self.p * 2 * d])?;
        let h = self.conv1.forward(s, grouped)?.relu();
        Ok(self.conv2.forward(s, h.reshape(&[graph.n, self.groups() * d])?)?)
    }
}
