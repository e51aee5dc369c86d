use crate::attention::{pool, recover, AttentionBlock, AttentionalFusion, ClusterPool, Expand, OaFilter, TransformerGuidance};
use crate::graph_context::{build_knn_graph, CredibleContext, StructureContext};
use crate::layers::{context_norm, token_norm, top_indices, Linear, Scope};
use crate::tensor::{Session, Var};

use super::{GcgtMode, NetConfig, NetError, Result};

/// Per-channel normalization across correspondences.
pub fn context_normalization<'g>(x: Var<'g>) -> Result<Var<'g>> {
    Ok(context_norm(x)?)
}

/// Two stages of linear → context norm → token norm → ReLU, plus the identity.
#[derive(Debug, Clone, Copy)]
pub struct ResNetBlock {
    pub first: Linear,
    pub second: Linear,
}

impl ResNetBlock {
    pub fn new(scope: &mut Scope<'_>, d: usize) -> Self {
        Self {
            first: scope.linear("first", d, d),
            second: scope.linear("second", d, d),
        }
    }

    pub fn forward<'g>(&self, s: &Session<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for lin in [self.first, self.second] {
            h = token_norm(context_norm(lin.forward(s, h)?)?)?.relu();
        }
        Ok(x.add(h)?)
    }
}

/// Graph context enhancement: two graph-context branches, clustered,
/// recalibrated by self and cross attention, recovered and fused.
#[derive(Debug, Clone, Copy)]
pub struct Gcet {
    pub k: usize,
    pub cgc: CredibleContext,
    pub sgc: StructureContext,
    pub pool: ClusterPool,
    pub sa_cgc: AttentionBlock,
    pub ca_cgc: AttentionBlock,
    pub sa_sgc: AttentionBlock,
    pub ca_sgc: AttentionBlock,
    pub fuse_cgc: AttentionalFusion,
    pub fuse_sgc: AttentionalFusion,
    pub fuse_out: AttentionalFusion,
}

impl Gcet {
    pub fn new(scope: &mut Scope<'_>, c: &NetConfig) -> Result<Self> {
        Ok(Self {
            k: c.k,
            cgc: CredibleContext::new(&mut scope.sub("cgc"), c.d),
            sgc: StructureContext::new(&mut scope.sub("sgc"), c.d, c.k, c.p)?,
            pool: ClusterPool::new(&mut scope.sub("cluster"), c.d, c.clusters),
            sa_cgc: AttentionBlock::new(&mut scope.sub("sa_cgc"), c.d, c.heads)?,
            ca_cgc: AttentionBlock::new(&mut scope.sub("ca_cgc"), c.d, c.heads)?,
            sa_sgc: AttentionBlock::new(&mut scope.sub("sa_sgc"), c.d, c.heads)?,
            ca_sgc: AttentionBlock::new(&mut scope.sub("ca_sgc"), c.d, c.heads)?,
            fuse_cgc: AttentionalFusion::new(&mut scope.sub("fuse_cgc"), c.d, c.r)?,
            fuse_sgc: AttentionalFusion::new(&mut scope.sub("fuse_sgc"), c.d, c.r)?,
            fuse_out: AttentionalFusion::new(&mut scope.sub("fuse_out"), c.d, c.r)?,
        })
    }

    pub fn forward<'g>(&self, s: &Session<'g>, f: Var<'g>, m: usize) -> Result<Var<'g>> {
        self.forward_with(s, f, m, false)
    }

    /// With `bypass_attention` the self and cross attention blocks are replaced
    /// by the identity.
    pub fn forward_with<'g>(&self, s: &Session<'g>, f: Var<'g>, m: usize, bypass_attention: bool) -> Result<Var<'g>> {
        let graph = build_knn_graph(f, self.k)?;
        let cgc = self.cgc.forward(s, &graph)?;
        let sgc = self.sgc.forward(s, &graph)?;
        // One assignment serves both branches so cluster tokens stay aligned.
        let assignment = self.pool.assignment(s, cgc.add(sgc)?, m)?;
        let cgc_c = pool(assignment, cgc)?;
        let sgc_c = pool(assignment, sgc)?;
        let (cgc_e, sgc_e) = if bypass_attention {
            (
                self.fuse_cgc.forward(s, cgc_c, sgc_c)?,
                self.fuse_sgc.forward(s, sgc_c, cgc_c)?,
            )
        } else {
            (
                self.fuse_cgc.forward(
                    s,
                    self.sa_cgc.self_attention(s, cgc_c)?,
                    self.ca_cgc.cross_attention(s, sgc_c, cgc_c)?,
                )?,
                self.fuse_sgc.forward(
                    s,
                    self.sa_sgc.self_attention(s, sgc_c)?,
                    self.ca_sgc.cross_attention(s, cgc_c, sgc_c)?,
                )?,
            )
        };
        let cgc_r = recover(cgc_e, assignment)?;
        let sgc_r = recover(sgc_e, assignment)?;
        Ok(self.fuse_out.forward(s, cgc_r, sgc_r)?)
    }
}

#[derive(Debug, Clone)]
pub struct GcgtOutput<'g> {
    pub features: Var<'g>,
    /// Score table, one entry per row.
    pub scores: Var<'g>,
    /// Rows drawn as the guidance source, highest score first.
    pub sampled: Vec<usize>,
}

/// Graph context guidance: high-score rows are sampled and expanded into a
/// guidance source that attends over the clustered context.
#[derive(Debug, Clone, Copy)]
pub struct Gcgt {
    pub pool: ClusterPool,
    pub expand: Expand,
    pub transformer: TransformerGuidance,
    pub filter: Option<OaFilter>,
    pub fuse_guidance: Option<AttentionalFusion>,
    pub fuse_out: AttentionalFusion,
}

impl Gcgt {
    pub fn new(scope: &mut Scope<'_>, c: &NetConfig, mode: GcgtMode) -> Result<Self> {
        let whole = mode == GcgtMode::Whole;
        Ok(Self {
            pool: ClusterPool::new(&mut scope.sub("cluster"), c.d, c.clusters),
            expand: Expand::new(&mut scope.sub("expand"), c.d, c.clusters),
            transformer: TransformerGuidance::new(&mut scope.sub("tf"), c.d, c.heads)?,
            filter: whole.then(|| OaFilter::new(&mut scope.sub("oafilter"), c.d, c.clusters)),
            fuse_guidance: if whole {
                Some(AttentionalFusion::new(&mut scope.sub("fuse_guidance"), c.d, c.r)?)
            } else {
                None
            },
            fuse_out: AttentionalFusion::new(&mut scope.sub("fuse_out"), c.d, c.r)?,
        })
    }

    /// `score_head` maps `d` channels to one confidence per row.
    pub fn forward<'g>(
        &self,
        s: &Session<'g>,
        gc: Var<'g>,
        score_head: &Linear,
        m: usize,
        n_sample: usize,
    ) -> Result<GcgtOutput<'g>> {
        let n = gc.shape()[0];
        if n < m {
            return Err(NetError::TooFewCorrespondences {
                stage: "guidance clustering",
                needed: m,
                actual: n,
            });
        }
        let scores = score_head.forward(s, gc)?.reshape(&[n])?;
        let sampled = scores.with_data(|st| top_indices(st, n_sample.clamp(1, n)));
        let source = self.expand.forward(s, gc.gather_rows(&sampled)?, m)?;
        let (target, assignment) = self.pool.cluster(s, gc, m)?;
        let guided = self.transformer.forward(s, source, target)?.add(source)?;
        let result = match (self.filter, self.fuse_guidance) {
            (Some(filter), Some(fuse)) => fuse.forward(s, guided, filter.forward(s, target)?)?,
            _ => guided,
        };
        let features = self.fuse_out.forward(s, recover(result, assignment)?, gc)?;
        Ok(GcgtOutput {
            features,
            scores,
            sampled,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModuleOutput<'g> {
    /// One logit per input row.
    pub logits: Var<'g>,
    /// Kept rows (indices into this module's input), highest logit first.
    pub kept: Vec<usize>,
    /// Final features of all input rows.
    pub features: Var<'g>,
    pub guidance: Option<GcgtOutput<'g>>,
}

/// Embedding, three residual blocks, optional enhancement, three residual
/// blocks, optional guidance, and a logit head.
#[derive(Debug, Clone)]
pub struct PruningModule {
    pub embed: Linear,
    /// Merges carried-over features with the coordinate embedding.
    pub merge: Option<Linear>,
    pub pre: Vec<ResNetBlock>,
    pub gcet: Option<Gcet>,
    pub post: Vec<ResNetBlock>,
    pub gcgt: Option<Gcgt>,
    pub head: Linear,
    pub config: NetConfig,
}

impl PruningModule {
    pub fn new(scope: &mut Scope<'_>, c: &NetConfig, takes_features: bool) -> Result<Self> {
        let d = c.d;
        let variant = c.variant;
        Ok(Self {
            embed: scope.linear("embed", 4, d),
            merge: takes_features.then(|| scope.linear("merge", 2 * d, d)),
            pre: (0..3).map(|i| ResNetBlock::new(&mut scope.sub(&format!("pre{i}")), d)).collect(),
            gcet: if variant.use_gcet() {
                Some(Gcet::new(&mut scope.sub("gcet"), c)?)
            } else {
                None
            },
            post: (0..3).map(|i| ResNetBlock::new(&mut scope.sub(&format!("post{i}")), d)).collect(),
            gcgt: match variant.gcgt() {
                GcgtMode::Off => None,
                mode => Some(Gcgt::new(&mut scope.sub("gcgt"), c, mode)?),
            },
            head: scope.linear("head", d, 1),
            config: *c,
        })
    }

    /// `coords` is `n×4`; `features` carries `n×d` context from a previous module.
    pub fn forward<'g>(&self, s: &Session<'g>, coords: Var<'g>, features: Option<Var<'g>>) -> Result<ModuleOutput<'g>> {
        let n = coords.shape()[0];
        let c = &self.config;
        if n < c.min_module_input() {
            return Err(NetError::TooFewCorrespondences {
                stage: "pruning module",
                needed: c.min_module_input(),
                actual: n,
            });
        }
        let mut x = self.embed.forward(s, coords)?;
        match (self.merge, features) {
            (Some(merge), Some(f)) => x = merge.forward(s, s.graph().concat(&[f, x], 1)?)?,
            (None, None) => {}
            _ => return Err(NetError::Config("carried features do not match module wiring".into())),
        }
        for block in &self.pre {
            x = block.forward(s, x)?;
        }
        let m = c.clusters_for(n);
        if let Some(gcet) = &self.gcet {
            x = x.add(gcet.forward(s, x, m)?)?;
        }
        for block in &self.post {
            x = block.forward(s, x)?;
        }
        let guidance = match &self.gcgt {
            Some(gcgt) => {
                let out = gcgt.forward(s, x, &self.head, m, c.sample_count(n))?;
                x = out.features;
                Some(out)
            }
            None => None,
        };
        let logits = self.head.forward(s, x)?.reshape(&[n])?;
        let kept = logits.with_data(|o| top_indices(o, c.kept_count(n)));
        Ok(ModuleOutput {
            logits,
            kept,
            features: x,
            guidance,
        })
    }
}
