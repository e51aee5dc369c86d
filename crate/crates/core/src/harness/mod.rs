//! Training, evaluation and experiment runners, and the files they emit.

mod config;
mod eval;
mod experiments;
mod metrics;
mod output;
mod train;

pub use config::{known_keys, net_config_from_text, net_config_to_text, Mode, RunConfig, OUT_DIR_ENV};
pub use eval::{evaluate_model, evaluate_ransac, summarize, EvalReport, SceneMetrics};
pub use experiments::{run_ablation, sweep_sampling_rate, AblationRow, AblationTable, Lab, SweepRow, SweepTable, Trial};
pub use metrics::{evaluate_classification, evaluate_pose_map, f_score, median, Prf};
pub use output::{
    ablation_csv, curve_csv, load_model, save_model, sweep_csv, sweep_svg, write_json, CHECKPOINT_FILE, CONFIG_FILE,
};
pub use train::{train, CurveRow, TrainOutcome};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::network::NetError;
use crate::scene::{generate_split, Scene, SceneError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Train, validation and test scenes drawn from disjoint seed ranges.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// First scene seed of `split`. Each split owns a block of a million seeds
/// and every data seed owns three consecutive blocks.
pub fn split_base_seed(data_seed: u64, split: Split) -> u64 {
    let offset = match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    data_seed
        .wrapping_mul(3)
        .wrapping_add(offset)
        .wrapping_mul(config::SPLIT_STRIDE)
}

impl Splits {
    pub fn generate(run: &RunConfig) -> Result<Self> {
        let make = |n, split| generate_split(&run.scene, n, split_base_seed(run.data_seed, split));
        Ok(Self {
            train: make(run.n_train, Split::Train)?,
            val: make(run.n_val, Split::Val)?,
            test: make(run.n_test, Split::Test)?,
        })
    }

    /// Only the test split, for evaluation-only modes.
    pub fn test_only(run: &RunConfig) -> Result<Vec<Scene>> {
        Ok(generate_split(&run.scene, run.n_test, split_base_seed(run.data_seed, Split::Test))?)
    }
}
