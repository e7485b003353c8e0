use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::EvalMode;
use super::train::TwoPhaseOutcome;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const MODEL_FILE: &str = "model.ckpt";
pub const INDEX_FILE: &str = "index.grix";

pub fn adapter_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint-seed{seed}.bin"))
}

/// `metrics-{mode}-seed{seed}.json`, or `metrics-{mode}.json` for the
/// aggregate when `seed` is `None`.
pub fn metrics_path(dir: &Path, mode: &str, seed: Option<u64>) -> PathBuf {
    match seed {
        Some(s) => dir.join(format!("metrics-{mode}-seed{s}.json")),
        None => dir.join(format!("metrics-{mode}.json")),
    }
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the model checkpoint, index, one checkpoint per phase-2 seed and
/// the metrics files of a two-phase run into `dir`.
pub fn write_two_phase(dir: &Path, outcome: &TwoPhaseOutcome, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = Checkpoint {
        config: cfg.clone(),
        seed: cfg.seed,
        index_ref: INDEX_FILE.into(),
        model: outcome.model.clone(),
        adapter: None,
    };
    base.save(&dir.join(MODEL_FILE))?;
    outcome.index.save(&dir.join(INDEX_FILE))?;
    let base_mode = EvalMode::Base.as_str();
    write_report(&metrics_path(dir, base_mode, Some(cfg.seed)), &outcome.base_test)?;
    write_report(&metrics_path(dir, base_mode, None), &outcome.base_test)?;
    let enhanced = EvalMode::Enhanced.as_str();
    for run in &outcome.runs {
        let ck = Checkpoint {
            seed: run.seed,
            adapter: Some(run.params.clone()),
            ..base.clone()
        };
        ck.save(&adapter_checkpoint_path(dir, run.seed))?;
        write_report(&metrics_path(dir, enhanced, Some(run.seed)), &run.test_report)?;
    }
    write_report(&metrics_path(dir, enhanced, None), &outcome.enhanced_test)
}
