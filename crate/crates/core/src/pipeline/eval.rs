use std::fmt;
use std::str::FromStr;

use super::config::RunConfig;
use crate::adapter::{averaging_predict, enhanced_predict, retrieve_with_dropout, AdapterParams, Query};
use crate::error::{Error, Result};
use crate::gnn::Prediction;
use crate::graph::{Label, Task};
use crate::index::{similarity, FlatIndex};
use crate::metrics::{longtail_class_report, task_metric, value_bucket_report, Metric, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Task head only.
    Base,
    /// Self-attention over the model prediction and retrieved labels.
    Enhanced,
    /// Uniform weights over the same slots.
    Averaging,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Base => "base",
            EvalMode::Enhanced => "enhanced",
            EvalMode::Averaging => "averaging",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(EvalMode::Base),
            "enhanced" => Ok(EvalMode::Enhanced),
            "averaging" => Ok(EvalMode::Averaging),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected base, enhanced or averaging)"
            ))),
        }
    }
}

fn require_index<'a>(index: Option<&'a FlatIndex>, queries: &[Query]) -> Result<&'a FlatIndex> {
    let index = index.ok_or_else(|| Error::Missing("index missing: run build-index first".into()))?;
    if let Some(q) = queries.first() {
        if q.embedding.len() != index.dim() {
            return Err(Error::Index(format!(
                "index dimension {} does not match model embedding dimension {}",
                index.dim(),
                q.embedding.len()
            )));
        }
    }
    Ok(index)
}

/// Per-example predictions under `mode`.
pub fn predict(
    queries: &[Query],
    mode: EvalMode,
    index: Option<&FlatIndex>,
    adapter: Option<&AdapterParams>,
    k: usize,
) -> Result<Vec<Prediction>> {
    match mode {
        EvalMode::Base => Ok(queries.iter().map(|q| q.prediction.clone()).collect()),
        EvalMode::Enhanced => {
            let adapter =
                adapter.ok_or_else(|| Error::Missing("adapter missing: run train-adapter first".into()))?;
            let index = require_index(index, queries)?;
            queries
                .iter()
                .map(|q| {
                    let set = retrieve_with_dropout(index, &q.embedding, adapter.k(), false, None)?;
                    enhanced_predict(adapter, q, &set)
                })
                .collect()
        }
        EvalMode::Averaging => {
            let index = require_index(index, queries)?;
            queries
                .iter()
                .map(|q| {
                    let set = retrieve_with_dropout(index, &q.embedding, k, false, None)?;
                    averaging_predict(&q.prediction, &set)
                })
                .collect()
        }
    }
}

/// Headline metric plus the long-tail class groups (multiclass) or value
/// buckets (regression).
pub fn report_from_predictions(
    task: Task,
    preds: &[Prediction],
    labels: &[Label],
    train_class_counts: &[usize],
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    let headline = task_metric(task, preds, labels)?;
    let report = MetricsReport::single(Metric::for_task(task), headline);
    match task {
        Task::Multiclass(_) => {
            let p: Vec<usize> = preds.iter().filter_map(Prediction::argmax).collect();
            let l: Vec<usize> = labels.iter().filter_map(Label::class).collect();
            let groups = longtail_class_report(&p, &l, train_class_counts, &cfg.boundaries)?.groups;
            Ok(report.with_groups(groups))
        }
        Task::Regression => {
            let p: Vec<f64> = preds.iter().filter_map(Prediction::value).collect();
            let t: Vec<f64> = labels.iter().filter_map(Label::value).collect();
            Ok(report.with_groups(value_bucket_report(&p, &t, &cfg.edges)?.groups))
        }
        Task::Binary => Ok(report),
    }
}

/// Evaluates precomputed queries under `mode`.
pub fn evaluate(
    queries: &[Query],
    task: Task,
    mode: EvalMode,
    index: Option<&FlatIndex>,
    adapter: Option<&AdapterParams>,
    cfg: &RunConfig,
    train_class_counts: &[usize],
) -> Result<MetricsReport> {
    let preds = predict(queries, mode, index, adapter, cfg.k)?;
    let labels: Vec<Label> = queries.iter().map(|q| q.label).collect();
    report_from_predictions(task, &preds, &labels, train_class_counts, cfg)
}

/// Majority vote over the `n` nearest training examples.
///
/// Modal ties go to the label whose nearest supporting entry is closest.
/// For binary tasks the class-1 score is the best similarity among the
/// modal label's entries, or one minus it when the modal label is 0.
/// Real-valued labels only support `n = 1`.
pub fn baseline_majority(index: &FlatIndex, queries: &[Query], task: Task, n: usize) -> Result<Vec<Prediction>> {
    if n == 0 || n > index.len() {
        return Err(Error::InvalidArgument(format!(
            "majority voting needs 1 <= n <= index size ({}), got {n}",
            index.len()
        )));
    }
    if task == Task::Regression && n > 1 {
        return Err(Error::InvalidArgument(
            "majority voting over real-valued labels is undefined; use n = 1".into(),
        ));
    }
    let index = require_index(Some(index), queries)?;
    queries
        .iter()
        .map(|q| {
            let hits = index.search(&q.embedding, n)?;
            if task == Task::Regression {
                let v = hits[0].entry.label.value().ok_or_else(|| {
                    Error::InvalidArgument("index holds class labels for a regression task".into())
                })?;
                return Ok(Prediction::Value(v));
            }
            // (class, votes, rank of first supporting hit)
            let mut tally: Vec<(usize, usize, usize)> = Vec::new();
            for (rank, h) in hits.iter().enumerate() {
                let c = h.entry.label.class().ok_or_else(|| {
                    Error::InvalidArgument("index holds real labels for a classification task".into())
                })?;
                match tally.iter_mut().find(|t| t.0 == c) {
                    Some(t) => t.1 += 1,
                    None => tally.push((c, 1, rank)),
                }
            }
            let &(class, _, rank) = tally
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
                .expect("at least one hit");
            if task == Task::Binary {
                let sim = similarity(hits[rank].distance);
                let score = if class == 1 { sim } else { 1.0 - sim };
                return Ok(Prediction::Probs(vec![1.0 - score, score]));
            }
            let mut probs = vec![0.0; task.num_outputs()];
            let slot = probs.get_mut(class).ok_or_else(|| Error::IndexOutOfRange {
                op: "baseline_majority",
                detail: format!("class {class} >= {}", task.num_outputs()),
            })?;
            *slot = 1.0;
            Ok(Prediction::Probs(probs))
        })
        .collect()
}

/// Label of the single nearest training example.
pub fn baseline_retrieval(index: &FlatIndex, queries: &[Query], task: Task) -> Result<Vec<Prediction>> {
    baseline_majority(index, queries, task, 1)
}
