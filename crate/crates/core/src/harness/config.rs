use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{HarnessError, Result};
use crate::network::{NetConfig, Variant};
use crate::scene::SceneConfig;

/// Environment variable that overrides the output directory of every mode.
pub const OUT_DIR_ENV: &str = "GCTNET_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Eval,
    Ablate,
    SweepSr,
    Baseline,
    GenData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub net: NetConfig,
    pub scene: SceneConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Model initialization and batch order.
    pub seed: u64,
    /// Seeds the scene splits; shared by every model seed so comparisons are paired.
    pub data_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Validation period in steps; zero disables periodic validation.
    pub val_every: usize,
    /// Model seeds of the ablation and sweep experiments.
    pub seeds: Vec<u64>,
    /// Sampling rates of the sweep.
    pub rates: Vec<f64>,
    pub ransac_iterations: usize,
    pub out_dir: PathBuf,
    /// Checkpoint to evaluate; `eval` without one evaluates the untrained model.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            net: NetConfig::default(),
            scene: SceneConfig::default(),
            steps: 5000,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            data_seed: 0,
            n_train: 2000,
            n_val: 50,
            n_test: 200,
            val_every: 500,
            seeds: vec![0, 1, 2],
            rates: vec![0.05, 0.1, 0.2, 0.35, 0.5],
            ransac_iterations: 100_000,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    /// Settings sized for a single CPU core: a narrow network and single-scene
    /// batches, keeping the scene distribution and step count of the defaults.
    pub fn desk() -> Self {
        Self {
            net: NetConfig {
                d: 32,
                clusters: 16,
                ..NetConfig::default()
            },
            batch_size: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.scene.validate()?;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.n_train < 1 || self.n_test < 1 {
            return bad("n_train and n_test must be positive");
        }
        if self.n_train.max(self.n_val).max(self.n_test) as u64 >= SPLIT_STRIDE {
            return bad("split sizes must stay below 1e6 scenes");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.rates.is_empty() || self.rates.iter().any(|&r| !(r > 0.0 && r <= 0.5)) {
            return bad("rates must be non-empty and lie in (0, 0.5]");
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one field. Keys are dotted paths (`net.d`, `scene.seed`) or bare
    /// field names that are unique across the config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let path = resolve_key(&tree, key)?;
        let slot = path
            .iter()
            .try_fold(&mut tree, |node, part| node.get_mut(part.as_str()))
            .expect("resolved path exists");
        *slot = parse_value(slot, value);
        *self = serde_json::from_value(tree).map_err(|e| HarnessError::Config(format!("{key} = {value}: {e}")))?;
        Ok(())
    }

    /// Applies the output directory override from the environment, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
    }

    /// Every leaf as `path = value`, in field order.
    pub fn to_text(&self) -> String {
        to_flat_text(&serde_json::to_value(self).expect("config serializes"), "")
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.net.variant = variant;
        c
    }
}

/// Network hyperparameters as flat `field = value` lines.
pub fn net_config_to_text(net: &NetConfig) -> String {
    to_flat_text(&serde_json::to_value(net).expect("config serializes"), "")
}

pub fn net_config_from_text(text: &str) -> Result<NetConfig> {
    let mut run = RunConfig::default();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", no + 1)))?;
        run.set(&format!("net.{}", key.trim()), value.trim())?;
    }
    Ok(run.net)
}

pub(crate) const SPLIT_STRIDE: u64 = 1_000_000;

fn to_flat_text(v: &Value, prefix: &str) -> String {
    let mut out = String::new();
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.push_str(&to_flat_text(child, &key));
            }
        }
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        Value::Null => out.push_str(&format!("{prefix} = null\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
    out
}

fn leaf_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            prefix.push(k.clone());
            out.push(prefix.clone());
            leaf_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn resolve_key(tree: &Value, key: &str) -> Result<Vec<String>> {
    let mut all = Vec::new();
    leaf_paths(tree, &mut Vec::new(), &mut all);
    let wanted: Vec<String> = key.split('.').map(str::to_string).collect();
    if all.contains(&wanted) {
        return Ok(wanted);
    }
    let matches: Vec<&Vec<String>> = all.iter().filter(|p| p.ends_with(&wanted)).collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(HarnessError::Config(format!("unknown key `{key}`"))),
        many => Err(HarnessError::Config(format!(
            "ambiguous key `{key}`: {}",
            many.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Interprets `raw` as JSON where possible, so `[1, 2]`, `0.5` and `true` keep
/// their types. Comma lists become arrays when the field is one; anything
/// else is taken as a string.
fn parse_value(current: &Value, raw: &str) -> Value {
    if current.is_array() {
        if let Ok(v) = serde_json::from_str::<Value>(&format!("[{raw}]")) {
            return match v {
                Value::Array(mut items) if items.len() == 1 && items[0].is_array() => items.remove(0),
                other => other,
            };
        }
    }
    serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Field names accepted by [`RunConfig::set`], dotted.
pub fn known_keys() -> Vec<String> {
    let mut all = Vec::new();
    leaf_paths(&serde_json::to_value(RunConfig::default()).expect("config serializes"), &mut Vec::new(), &mut all);
    all.into_iter().map(|p| p.join(".")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::desk();
        c.seeds = vec![4, 5];
        c.checkpoint = Some("a/b.ckpt".into());
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bare_and_dotted_keys() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nd = 16\nscene.outlier_ratio = 0.5\nvariant = ips-gcet\nseeds = 7, 8\n\nsteps=3")
            .unwrap();
        assert_eq!(c.net.d, 16);
        assert_eq!(c.scene.outlier_ratio, 0.5);
        assert_eq!(c.net.variant, Variant::IpsGcet);
        assert_eq!(c.seeds, vec![7, 8]);
        c.set("seeds", "3").unwrap();
        assert_eq!(c.seeds, vec![3]);
        c.set("rates", "[0.1, 0.2]").unwrap();
        assert_eq!(c.rates, vec![0.1, 0.2]);
        assert_eq!(c.steps, 3);
        c.set("seed", "9").unwrap();
        assert_eq!((c.seed, c.scene.seed), (9, 0));
        assert!(c.set("k", "1").is_ok());
        assert!(c.set("delta", "x").is_err());
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("d", "abc").is_err());
    }

    #[test]
    fn net_text_round_trip() {
        let net = RunConfig::desk().net;
        assert_eq!(net_config_from_text(&net_config_to_text(&net)).unwrap(), net);
    }
}
