//! Run configuration as a flat map of dotted keys.
//!
//! A config file is a single JSON object such as
//! `{"seed": 7, "train.lr": 0.01, "model.dims.e1": 32}`. Keys not listed in
//! [`KEYS`] are rejected. One root `seed` drives every random stream.

use std::path::Path;

use serde_json::{Map, Value};

use crate::baselines::BaselineHyper;
use crate::bigraph::SplitFractions;
use crate::error::{Error, Result};
use crate::explain::DEFAULT_TOP;
use crate::synth::SyntheticSpec;
use crate::train::TrainConfig;

/// Every accepted key with a one-line description (default in brackets).
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for every random stream [42]"),
    ("synth.students", "synthetic student count [369]"),
    ("synth.courses", "synthetic course count [142]"),
    ("synth.base_levels", "cluster-block base levels, rows = student clusters [[[9,4,6],[4,9,6],[6,6,2],[2,7,9]]]"),
    ("synth.noise", "Gaussian level noise σ [0.7]"),
    ("synth.density", "probability a pair is observed [0.15]"),
    ("split.train", "training fraction of edges [0.75]"),
    ("split.test", "test fraction of edges [0.10]"),
    ("split.valid", "validation fraction of edges [0.05]"),
    ("model.dims.k", "node feature width K [64]"),
    ("model.dims.e1", "graph-convolution width E1 [64]"),
    ("model.dims.e", "latent width E [32]"),
    ("model.depth", "stacked graph-convolution layers [1]"),
    ("train.epochs", "full-graph training steps [200]"),
    ("train.lr", "Adam step size [0.1]"),
    ("train.dropout", "node dropout rate on hidden rows [0.1]"),
    ("train.kl_weight", "weight of the KL term [1.0]"),
    ("train.loss", "masked-softmax-ce | literal-bce [masked-softmax-ce]"),
    ("train.eval_every", "epochs between RMSE evaluations [10]"),
    ("baseline.knn_k", "neighbours for user/item kNN [20]"),
    ("baseline.knn_shrinkage", "similarity shrinkage λ [10]"),
    ("baseline.mf_rank", "biased MF rank [16]"),
    ("baseline.mf_lr", "biased MF SGD step [0.005]"),
    ("baseline.mf_reg", "biased MF L2 weight [0.02]"),
    ("baseline.mf_epochs", "biased MF epochs [100]"),
    ("baseline.mf_init_std", "biased MF initial factor std [0.1]"),
    ("explain.top", "nodes listed per attribution report [12]"),
    ("explain.clusters", "k for embedding k-means; 0 = number of truth clusters [0]"),
];

/// Help text listing [`KEYS`].
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (JSON file via --config, or --set key=value):\n");
    for (key, doc) in KEYS {
        out.push_str(&format!("  {key:<width$}  {doc}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub synth: SyntheticSpec,
    pub train: TrainConfig,
    pub baseline: BaselineHyper,
    pub top: usize,
    /// 0 means "use the number of truth clusters".
    pub clusters: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let mut s = Self {
            seed: 42,
            synth: SyntheticSpec::default(),
            train: TrainConfig::default(),
            baseline: BaselineHyper::default(),
            top: DEFAULT_TOP,
            clusters: 0,
        };
        s.set_seed(42);
        s
    }
}

fn bad(key: &str, value: &Value, want: &str) -> Error {
    Error::InvalidArgument(format!("config key `{key}`: expected {want}, got {value}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, v, "a number"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| bad(key, v, "a nonnegative integer"))
}

impl Settings {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self.baseline.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "seed" => {
                let seed = v.as_u64().ok_or_else(|| bad(key, v, "a nonnegative integer"))?;
                self.set_seed(seed);
            }
            "synth.students" => self.synth.students = as_usize(key, v)?,
            "synth.courses" => self.synth.courses = as_usize(key, v)?,
            "synth.base_levels" => {
                self.synth.base_levels =
                    serde_json::from_value(v.clone()).map_err(|_| bad(key, v, "an array of level rows"))?
            }
            "synth.noise" => self.synth.noise = as_f64(key, v)?,
            "synth.density" => self.synth.density = as_f64(key, v)?,
            "split.train" => self.train.split.train = as_f64(key, v)?,
            "split.test" => self.train.split.test = as_f64(key, v)?,
            "split.valid" => self.train.split.valid = as_f64(key, v)?,
            "model.dims.k" => self.train.features = as_usize(key, v)?,
            "model.dims.e1" => self.train.hidden = as_usize(key, v)?,
            "model.dims.e" => self.train.latent = as_usize(key, v)?,
            "model.depth" => self.train.depth = as_usize(key, v)?,
            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.lr" => self.train.learning_rate = as_f64(key, v)?,
            "train.dropout" => self.train.dropout = as_f64(key, v)?,
            "train.kl_weight" => self.train.kl_weight = as_f64(key, v)?,
            "train.loss" => {
                let s = v.as_str().ok_or_else(|| bad(key, v, "a string"))?;
                self.train.loss = s.parse()?;
            }
            "train.eval_every" => self.train.eval_every = as_usize(key, v)?,
            "baseline.knn_k" => self.baseline.knn_k = as_usize(key, v)?,
            "baseline.knn_shrinkage" => self.baseline.knn_shrinkage = as_f64(key, v)?,
            "baseline.mf_rank" => self.baseline.mf_rank = as_usize(key, v)?,
            "baseline.mf_lr" => self.baseline.mf_learning_rate = as_f64(key, v)?,
            "baseline.mf_reg" => self.baseline.mf_regularization = as_f64(key, v)?,
            "baseline.mf_epochs" => self.baseline.mf_epochs = as_usize(key, v)?,
            "baseline.mf_init_std" => self.baseline.mf_init_std = as_f64(key, v)?,
            "explain.top" => self.top = as_usize(key, v)?,
            "explain.clusters" => self.clusters = as_usize(key, v)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{key}` (see --help for the list)"
                )))
            }
        }
        Ok(())
    }

    /// Apply every entry of a JSON object. `seed` is applied first so that
    /// key order in the file does not matter.
    pub fn apply_map(&mut self, map: &Map<String, Value>) -> Result<()> {
        if let Some(v) = map.get("seed") {
            self.set("seed", v)?;
        }
        for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "seed") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        match serde_json::from_str::<Value>(text)? {
            Value::Object(map) => self.apply_map(&map),
            other => Err(Error::InvalidArgument(format!(
                "config must be a JSON object of dotted keys, got {other}"
            ))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::default();
        s.apply_json(&text)?;
        Ok(s)
    }

    /// `key=value`, where value is parsed as JSON and otherwise taken as a
    /// bare string.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("expected key=value, got `{assignment}`"))
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), &value)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.baseline.knn_k == 0 || self.baseline.mf_rank == 0 {
            return Err(Error::InvalidArgument(
                "baseline.knn_k and baseline.mf_rank must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn split_fractions(&self) -> SplitFractions {
        self.train.split
    }
}
