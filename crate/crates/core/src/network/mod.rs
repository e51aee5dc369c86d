//! The progressive pruning network: two chained pruning modules, an inlier
//! weight head, a differentiable weighted eight-point estimate and full-size
//! verification, plus the hybrid training loss.

mod blocks;
mod loss;
mod pipeline;

pub use blocks::{context_normalization, Gcet, Gcgt, GcgtOutput, ModuleOutput, PruningModule, ResNetBlock};
pub use loss::{
    balanced_bce_weights, classification_loss, dynamic_temperature, hybrid_loss, regression_loss, LossBreakdown,
};
pub use pipeline::{inlier_weights, GctNet, PipelineOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::graph_context::GraphContextError;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("{stage} needs at least {needed} correspondences, got {actual}")]
    TooFewCorrespondences {
        stage: &'static str,
        needed: usize,
        actual: usize,
    },
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphContextError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Which guidance transformer a pruning module carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcgtMode {
    Off,
    /// Sampling, expansion and guidance without the cluster filter.
    Partial,
    Whole,
}

/// The five rows of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ips,
    IpsGcet,
    IpsGcgtP,
    IpsGcgtW,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ips,
        Variant::IpsGcet,
        Variant::IpsGcgtP,
        Variant::IpsGcgtW,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ips => "IPS",
            Variant::IpsGcet => "IPS+GCET",
            Variant::IpsGcgtP => "IPS+GCGT-P",
            Variant::IpsGcgtW => "IPS+GCGT-W",
            Variant::Full => "IPS+GCET+GCGT-W",
        }
    }

    pub fn use_gcet(self) -> bool {
        matches!(self, Variant::IpsGcet | Variant::Full)
    }

    pub fn gcgt(self) -> GcgtMode {
        match self {
            Variant::Ips | Variant::IpsGcet => GcgtMode::Off,
            Variant::IpsGcgtP => GcgtMode::Partial,
            Variant::IpsGcgtW | Variant::Full => GcgtMode::Whole,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channel width.
    pub d: usize,
    /// Neighbors per node.
    pub k: usize,
    /// Group width of the structure branch.
    pub p: usize,
    /// Sampling rate of the guidance source.
    pub sr: f64,
    /// Channel reduction of attentional fusion.
    pub r: usize,
    pub heads: usize,
    /// Upper bound on the cluster count; the effective count is `min(clusters, n/2)`.
    pub clusters: usize,
    pub prune_rate: f64,
    pub n_modules: usize,
    /// Regression weight after warm-up.
    pub delta: f64,
    /// Fraction of training steps with the regression term switched off.
    pub warmup_fraction: f64,
    pub label_threshold: f64,
    pub verify_threshold: f64,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d: 128,
            k: 9,
            p: 3,
            sr: 0.2,
            r: 4,
            heads: 4,
            clusters: 128,
            prune_rate: 0.5,
            n_modules: 2,
            delta: 0.5,
            warmup_fraction: 0.04,
            label_threshold: 1e-4,
            verify_threshold: 1e-4,
            variant: Variant::Full,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.d == 0 || self.k == 0 || self.p == 0 || self.r == 0 || self.heads == 0 || self.n_modules == 0 {
            return bad("d, k, p, r, heads and n_modules must be positive".into());
        }
        if self.d % self.heads != 0 || self.d % self.r != 0 {
            return bad(format!("d = {} must be divisible by heads = {} and r = {}", self.d, self.heads, self.r));
        }
        if self.k % self.p != 0 {
            return bad(format!("k = {} must be divisible by p = {}", self.k, self.p));
        }
        if self.clusters < 2 {
            return bad("clusters must be at least 2".into());
        }
        if !(self.prune_rate > 0.0 && self.prune_rate < 1.0) {
            return bad("prune_rate must lie in (0, 1)".into());
        }
        if !(self.sr > 0.0 && self.sr <= 1.0) {
            return bad("sr must lie in (0, 1]".into());
        }
        if !(self.delta >= 0.0) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("delta must be non-negative and warmup_fraction in [0, 1]".into());
        }
        if !(self.label_threshold > 0.0 && self.verify_threshold >= 0.0) {
            return bad("thresholds must be positive".into());
        }
        Ok(())
    }

    /// Effective cluster count for a module that sees `n` correspondences.
    pub fn clusters_for(&self, n: usize) -> usize {
        self.clusters.min(n / 2).max(2)
    }

    /// Guidance sample size `⌊sr·n⌋`, at least one.
    pub fn sample_count(&self, n: usize) -> usize {
        (((self.sr * n as f64) + 1e-9).floor() as usize).clamp(1, n)
    }

    /// Rows a module keeps out of `n`.
    pub fn kept_count(&self, n: usize) -> usize {
        ((self.prune_rate * n as f64) + 1e-9).floor() as usize
    }

    /// Smallest input a single pruning module accepts.
    pub fn min_module_input(&self) -> usize {
        2 * (self.k + 1)
    }

    /// Regression weight at `step` of `total`.
    pub fn delta_at(&self, step: usize, total: usize) -> f64 {
        if (step as f64) < self.warmup_fraction * total as f64 {
            0.0
        } else {
            self.delta
        }
    }
}
