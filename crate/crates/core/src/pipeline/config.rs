use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterTrainConfig;
use crate::error::{Error, Result};
use crate::gnn::GnnConfig;
use crate::graph::synth::REGRESSION_BUCKET_EDGES;
use crate::graph::{load_jsonl, load_jsonl_with_meta, Dataset, DatasetMeta};
use crate::metrics::DEFAULT_BOUNDARIES;

/// Everything a run needs. Loaded from TOML; missing keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Overrides the dataset's metadata sidecar when set.
    pub task: Option<String>,
    pub num_classes: Option<usize>,
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: usize,
    /// Seed of phase 1. Phase-2 run `s` uses `seed + s`.
    pub seed: u64,
    /// Adapter projection width; the embedding width when unset.
    pub proj_dim: Option<usize>,
    pub boundaries: Vec<usize>,
    pub edges: Vec<f64>,
    pub out: PathBuf,
    pub model: GnnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data.jsonl"),
            task: None,
            num_classes: None,
            m1: 300,
            m2: 200,
            k: 3,
            batch_size: 32,
            lr: 0.01,
            seeds: 5,
            seed: 0,
            proj_dim: None,
            boundaries: DEFAULT_BOUNDARIES.to_vec(),
            edges: REGRESSION_BUCKET_EDGES.to_vec(),
            out: PathBuf::from("run"),
            model: GnnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. A relative `dataset` path is resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m1 == 0 || self.m2 == 0 {
            return fail("m1 and m2 must be at least 1");
        }
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.seeds == 0 {
            return fail("seeds must be at least 1");
        }
        if self.proj_dim == Some(0) {
            return fail("proj_dim must be positive");
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return fail("boundaries must be strictly increasing");
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) || self.edges.iter().any(|e| !e.is_finite()) {
            return fail("edges must be finite and strictly increasing");
        }
        self.model.validate()
    }

    pub fn adapter(&self) -> AdapterTrainConfig {
        AdapterTrainConfig {
            k: self.k,
            proj_dim: self.proj_dim,
            epochs: self.m2,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }

    /// Seed of phase-2 run `s`.
    pub fn phase2_seed(&self, s: usize) -> u64 {
        self.seed.wrapping_add(s as u64)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.task {
            Some(task) => {
                let meta = DatasetMeta {
                    task: task.clone(),
                    num_classes: self.num_classes,
                };
                load_jsonl_with_meta(&self.dataset, &meta)
            }
            None => load_jsonl(&self.dataset),
        }
    }
}
