use crate::geometry::{design_row, full_size_verification, CorrespondenceSet, EssentialMatrix, Verification};
use crate::layers::{Linear, Scope};
use crate::tensor::{Graph, ParamStore, Session, Tensor, Var};

use super::{NetConfig, NetError, PruningModule, Result};

/// A network definition together with its parameters.
#[derive(Debug, Clone)]
pub struct GctNet {
    pub config: NetConfig,
    pub modules: Vec<PruningModule>,
    pub weight_head: Linear,
    pub store: ParamStore,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<'g> {
    /// Indices into the full set of every module's input rows.
    pub inputs: Vec<Vec<usize>>,
    /// Per module, one logit per input row, aligned with `inputs`.
    pub logits: Vec<Var<'g>>,
    /// Per module, indices into the full set of the rows it kept.
    pub kept: Vec<Vec<usize>>,
    /// Inlier weights of the last kept set, summing to one.
    pub weights: Var<'g>,
    /// Differentiable `3×3` estimate with unit Frobenius norm.
    pub e_hat: Var<'g>,
    pub estimate: EssentialMatrix,
    /// Distances and inlier mask over the full input set.
    pub verification: Verification,
}

impl PipelineOutput<'_> {
    pub fn final_mask(&self) -> &[bool] {
        &self.verification.mask
    }
}

/// Maps raw head outputs to weights: `relu(tanh(x))` normalized to sum one,
/// uniform if all of them vanish.
pub fn inlier_weights<'g>(raw: Var<'g>) -> Result<Var<'g>> {
    let n = raw.shape()[0];
    let w = raw.tanh().relu();
    let total: f64 = w.with_data(|v| v.iter().sum());
    if total > 0.0 {
        Ok(w.div(w.sum_all())?)
    } else {
        Ok(raw.graph().constant(Tensor::filled(&[n], 1.0 / n as f64)))
    }
}

/// `E` from the smallest eigenvector of `(diag(w)A)ᵀ(diag(w)A)`.
fn weighted_essential<'g>(g: &'g Graph, coords: &[[f64; 4]], weights: Var<'g>) -> Result<Var<'g>> {
    let n = coords.len();
    let rows: Vec<f64> = coords.iter().flat_map(design_row).collect();
    let a = g.constant(Tensor::new(&[n, 9], rows)?);
    let wa = a.mul(weights.reshape(&[n, 1])?)?;
    let normal = wa.transpose()?.matmul(wa)?;
    Ok(normal.sym_eig_min()?.reshape(&[3, 3])?)
}

impl GctNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let mut root = Scope::root(&mut store);
        let modules = (0..config.n_modules)
            .map(|i| PruningModule::new(&mut root.sub(&format!("m{}", i + 1)), &config, i > 0))
            .collect::<Result<Vec<_>>>()?;
        let weight_head = root.linear("weight_head", config.d, 1);
        Ok(Self {
            config,
            modules,
            weight_head,
            store,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Smallest full input the pipeline accepts.
    pub fn min_input(&self) -> usize {
        let mut need = self.config.min_module_input();
        for _ in 1..self.config.n_modules {
            need = ((need as f64) / self.config.prune_rate).ceil() as usize;
        }
        need.max(2 * self.config.min_module_input())
    }

    /// Progressive pruning, weighted estimation and verification of `q`.
    pub fn forward<'g>(&self, s: &Session<'g>, q: &CorrespondenceSet) -> Result<PipelineOutput<'g>> {
        let n = q.len();
        if n < self.min_input() {
            return Err(NetError::TooFewCorrespondences {
                stage: "pipeline",
                needed: self.min_input(),
                actual: n,
            });
        }
        let g = s.graph();
        let all = g.constant(Tensor::new(&[n, 4], q.flat())?);
        let mut current: Vec<usize> = (0..n).collect();
        let mut coords = all;
        let mut carried: Option<Var<'g>> = None;
        let mut inputs = Vec::new();
        let mut logits = Vec::new();
        let mut kept = Vec::new();
        for module in &self.modules {
            let out = module.forward(s, coords, carried)?;
            inputs.push(current.clone());
            logits.push(out.logits);
            let next: Vec<usize> = out.kept.iter().map(|&i| current[i]).collect();
            carried = Some(out.features.gather_rows(&out.kept)?);
            coords = coords.gather_rows(&out.kept)?;
            kept.push(next.clone());
            current = next;
        }
        let features = carried.expect("at least one module");
        let raw = self.weight_head.forward(s, features)?.reshape(&[current.len()])?;
        let weights = inlier_weights(raw)?;
        let kept_coords: Vec<[f64; 4]> = current.iter().map(|&i| q.coords()[i]).collect();
        let e_hat = weighted_essential(g, &kept_coords, weights)?;
        let estimate = e_hat.with_data(EssentialMatrix::from_row_slice);
        let verification = full_size_verification(&estimate, q, self.config.verify_threshold);
        Ok(PipelineOutput {
            inputs,
            logits,
            kept,
            weights,
            e_hat,
            estimate,
            verification,
        })
    }

    /// Inference without recording gradients for parameters.
    pub fn infer(&self, q: &CorrespondenceSet) -> Result<(EssentialMatrix, Verification)> {
        let g = Graph::new();
        let s = Session::frozen(&g, &self.store);
        let out = self.forward(&s, q)?;
        Ok((out.estimate, out.verification))
    }
}
