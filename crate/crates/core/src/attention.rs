//! Learned token-mixing blocks: multi-head attention, attentional fusion,
//! soft cluster pooling and its inverse, slot expansion, a cross-attention
//! transformer layer, and the order-aware cluster filter.
//!
//! All blocks take row-major `tokens × d` maps. Blocks whose parameters depend on
//! the cluster count are sized for a maximum `m` and narrowed at use.

use crate::layers::{context_norm, token_norm, Linear, Scope};
use crate::tensor::{Init, ParamId, Result, Session, TensorError, Var};

fn check_same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        })
    }
}

/// Scaled dot-product attention with `heads` heads and an output projection.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl MultiHeadAttention {
    pub fn new(scope: &mut Scope<'_>, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid(format!("width {d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            d,
            q: scope.linear("q", d, d),
            k: scope.linear("k", d, d),
            v: scope.linear("v", d, d),
            o: scope.linear("o", d, d),
        })
    }

    fn split<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        let n = x.shape()[0];
        x.reshape(&[n, self.heads, self.d / self.heads])?.permute(&[1, 0, 2])
    }

    /// Attention weights `[heads, n_q, n_kv]`; every row sums to one.
    pub fn weights<'g>(&self, s: &Session<'g>, queries: Var<'g>, keys: Var<'g>) -> Result<Var<'g>> {
        let q = self.split(self.q.forward(s, queries)?)?;
        let k = self.split(self.k.forward(s, keys)?)?.transpose()?;
        let scale = 1.0 / ((self.d / self.heads) as f64).sqrt();
        q.matmul(k)?.scale(scale).softmax(2)
    }

    /// Attends from `queries` into `kv` and projects back to `d` channels.
    pub fn forward<'g>(&self, s: &Session<'g>, queries: Var<'g>, kv: Var<'g>) -> Result<Var<'g>> {
        let nq = queries.shape()[0];
        let a = self.weights(s, queries, kv)?;
        let v = self.split(self.v.forward(s, kv)?)?;
        let mixed = a.matmul(v)?.permute(&[1, 0, 2])?.reshape(&[nq, self.d])?;
        self.o.forward(s, mixed)
    }
}

/// Pre-normalized residual attention block usable as self or cross attention.
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlock {
    pub mha: MultiHeadAttention,
}

impl AttentionBlock {
    pub fn new(scope: &mut Scope<'_>, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            mha: MultiHeadAttention::new(scope, d, heads)?,
        })
    }

    pub fn self_attention<'g>(&self, s: &Session<'g>, x: Var<'g>) -> Result<Var<'g>> {
        self.cross_attention(s, x, x)
    }

    /// Queries from `query_src`, keys and values from `kv_src`, residual on `query_src`.
    pub fn cross_attention<'g>(&self, s: &Session<'g>, query_src: Var<'g>, kv_src: Var<'g>) -> Result<Var<'g>> {
        let q = token_norm(query_src)?;
        let kv = if query_src.id() == kv_src.id() { q } else { token_norm(kv_src)? };
        query_src.add(self.mha.forward(s, q, kv)?)
    }
}

/// Gate `g = σ(local(A+B) + global(mean(A+B)))`, output `g⊙A + (1−g)⊙B`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionalFusion {
    pub local_down: Linear,
    pub local_up: Linear,
    pub global_down: Linear,
    pub global_up: Linear,
}

impl AttentionalFusion {
    pub fn new(scope: &mut Scope<'_>, d: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || d % reduction != 0 {
            return Err(TensorError::Invalid(format!(
                "width {d} is not divisible by reduction {reduction}"
            )));
        }
        let inner = d / reduction;
        Ok(Self {
            local_down: scope.linear("local_down", d, inner),
            local_up: scope.linear("local_up", inner, d),
            global_down: scope.linear("global_down", d, inner),
            global_up: scope.linear("global_up", inner, d),
        })
    }

    pub fn gate<'g>(&self, s: &Session<'g>, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        check_same_shape("attentional_fusion", &a, &b)?;
        let sum = a.add(b)?;
        let local = self.local_up.forward(s, self.local_down.forward(s, sum)?.relu())?;
        let pooled = sum.mean_axis(0)?;
        let global = self.global_up.forward(s, self.global_down.forward(s, pooled)?.relu())?;
        Ok(local.add(global)?.sigmoid())
    }

    pub fn forward<'g>(&self, s: &Session<'g>, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        let g = self.gate(s, a, b)?;
        // g⊙A + (1−g)⊙B written as B + g⊙(A−B).
        b.add(g.mul(a.sub(b)?)?)
    }
}

/// Soft assignment of `N` tokens to `m` clusters.
#[derive(Debug, Clone, Copy)]
pub struct ClusterPool {
    pub assign: Linear,
}

impl ClusterPool {
    pub fn new(scope: &mut Scope<'_>, d: usize, max_clusters: usize) -> Self {
        Self {
            assign: scope.linear("assign", d, max_clusters),
        }
    }

    pub fn max_clusters(&self) -> usize {
        self.assign.out_dim
    }

    /// `S = softmax_m(x·W + b)` restricted to the first `m` clusters.
    pub fn assignment<'g>(&self, s: &Session<'g>, x: Var<'g>, m: usize) -> Result<Var<'g>> {
        if m < 1 || m > self.max_clusters() {
            return Err(TensorError::Invalid(format!(
                "cluster count {m} outside 1..={}",
                self.max_clusters()
            )));
        }
        self.assign.forward(s, x)?.narrow(1, 0, m)?.softmax(1)
    }

    /// Returns the pooled `m×d` tokens and the `N×m` assignment.
    pub fn cluster<'g>(&self, s: &Session<'g>, x: Var<'g>, m: usize) -> Result<(Var<'g>, Var<'g>)> {
        let sa = self.assignment(s, x, m)?;
        Ok((pool(sa, x)?, sa))
    }
}

/// `normalize_columns(S)ᵀ · X`: every cluster is a convex combination of rows.
pub fn pool<'g>(assignment: Var<'g>, x: Var<'g>) -> Result<Var<'g>> {
    let cols = assignment.div(assignment.sum_axis(0)?)?;
    cols.transpose()?.matmul(x)
}

/// `S · X_c`: every row is a convex combination of cluster tokens.
pub fn recover<'g>(clustered: Var<'g>, assignment: Var<'g>) -> Result<Var<'g>> {
    let (m, sm) = (clustered.shape()[0], assignment.shape()[1]);
    if m != sm {
        return Err(TensorError::ShapeMismatch {
            op: "recover",
            lhs: clustered.shape(),
            rhs: assignment.shape(),
        });
    }
    assignment.matmul(clustered)
}

/// Learned soft unpooling of `n_s` sampled tokens onto `m` slots.
#[derive(Debug, Clone, Copy)]
pub struct Expand {
    pub slots: ParamId,
    pub key: Linear,
    pub d: usize,
    pub max_slots: usize,
}

impl Expand {
    pub fn new(scope: &mut Scope<'_>, d: usize, max_slots: usize) -> Self {
        Self {
            slots: scope.param("slots", &[max_slots, d], Init::Uniform(1.0)),
            key: scope.linear("key", d, d),
            d,
            max_slots,
        }
    }

    /// `T·sampled` with `T = softmax_{n_s}(slots · key(sampled)ᵀ / √d)`.
    pub fn forward<'g>(&self, s: &Session<'g>, sampled: Var<'g>, m: usize) -> Result<Var<'g>> {
        if m < 1 || m > self.max_slots {
            return Err(TensorError::Invalid(format!("slot count {m} outside 1..={}", self.max_slots)));
        }
        let slots = s.param(self.slots).narrow(0, 0, m)?;
        let keys = self.key.forward(s, sampled)?;
        let t = slots
            .matmul(keys.transpose()?)?
            .scale(1.0 / (self.d as f64).sqrt())
            .softmax(1)?;
        t.matmul(sampled)
    }
}

/// Cross-attention transformer layer: attention and a feed-forward stage,
/// each pre-normalized with a residual.
#[derive(Debug, Clone, Copy)]
pub struct TransformerGuidance {
    pub attn: AttentionBlock,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl TransformerGuidance {
    pub fn new(scope: &mut Scope<'_>, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attn: AttentionBlock::new(&mut scope.sub("attn"), d, heads)?,
            ff_in: scope.linear("ff_in", d, 2 * d),
            ff_out: scope.linear("ff_out", 2 * d, d),
        })
    }

    pub fn forward<'g>(&self, s: &Session<'g>, source: Var<'g>, target: Var<'g>) -> Result<Var<'g>> {
        check_same_shape("transformer_guidance", &source, &target)?;
        let x = self.attn.cross_attention(s, source, target)?;
        let ff = self.ff_out.forward(s, self.ff_in.forward(s, token_norm(x)?)?.relu())?;
        x.add(ff)
    }
}

/// Cluster-space filter: normalize across clusters, pointwise map, mix along
/// the cluster axis, normalize and map again, plus a residual.
#[derive(Debug, Clone, Copy)]
pub struct OaFilter {
    pub pre: Linear,
    pub mix: ParamId,
    pub post: Linear,
    pub max_clusters: usize,
}

impl OaFilter {
    pub fn new(scope: &mut Scope<'_>, d: usize, max_clusters: usize) -> Self {
        let bound = 1.0 / (max_clusters as f64).sqrt();
        Self {
            pre: scope.linear("pre", d, d),
            mix: scope.param("mix", &[max_clusters, max_clusters], Init::Uniform(bound)),
            post: scope.linear("post", d, d),
            max_clusters,
        }
    }

    pub fn forward<'g>(&self, s: &Session<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let m = x.shape()[0];
        if m < 2 || m > self.max_clusters {
            return Err(TensorError::Invalid(format!(
                "filter needs 2..={} clusters, got {m}",
                self.max_clusters
            )));
        }
        let h = self.pre.forward(s, context_norm(x)?.relu())?;
        let mix = s.param(self.mix).narrow(0, 0, m)?.narrow(1, 0, m)?;
        let h = h.add(mix.matmul(h.relu())?)?;
        let out = self.post.forward(s, context_norm(h)?.relu())?;
        x.add(out)
    }
}
