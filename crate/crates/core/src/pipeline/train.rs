use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::eval::{evaluate, EvalMode};
use crate::adapter::{train_adapter, AdapterParams, AdapterTrainStats, Query};
use crate::autodiff::{lr_at, AdamState, Tape};
use crate::error::{Error, Result};
use crate::gnn::{batch_loss, GnnModel, GraphBatch, Prediction};
use crate::graph::{Dataset, Example, Label};
use crate::index::FlatIndex;
use crate::metrics::{selection_metric, Metric, MetricsReport};

/// Batch size used for eval-mode inference.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1Stats {
    pub metric: Metric,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
    pub loss_history: Vec<f64>,
    pub valid_history: Vec<f64>,
}

/// Splits `order` into mini-batches. With batch norm on, a trailing batch
/// of one example is merged into the previous batch.
fn batches(order: &[usize], size: usize, min_rows: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_rows) {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Phase 1: trains the GNN for `m1` epochs and keeps the parameters with
/// the best validation score (earlier epochs win ties).
pub fn train_phase1(dataset: &Dataset, cfg: &RunConfig) -> Result<(GnnModel, Phase1Stats)> {
    cfg.validate()?;
    let task = dataset.task();
    let mut model = GnnModel::for_dataset(cfg.model.clone(), dataset, cfg.seed)?;
    let train = dataset.train();
    let min_rows = if cfg.model.batch_norm { 2 } else { 1 };
    if train.len() < min_rows {
        return Err(Error::InvalidDataset("batch norm needs at least two training examples".into()));
    }
    let valid: Vec<&Example> = dataset.valid().iter().collect();
    let valid_labels: Vec<Label> = valid.iter().map(|e| e.label).collect();
    let names = model.params().names().to_vec();
    let mut adam = AdamState::new(model.params().tensors(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut stats = Phase1Stats {
        metric: Metric::for_task(task),
        best_epoch: 0,
        best_valid: None,
        loss_history: Vec::with_capacity(cfg.m1),
        valid_history: Vec::with_capacity(cfg.m1),
    };
    let mut best = model.clone();

    for epoch in 0..cfg.m1 {
        order.shuffle(&mut rng);
        let lr = lr_at(epoch, cfg.lr);
        let mut epoch_loss = 0.0;
        for (step, idx) in batches(&order, cfg.batch_size, min_rows).into_iter().enumerate() {
            let examples: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
            let batch = GraphBatch::new(&examples)?;
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let fwd = model.forward(&mut tape, &vars, &batch, true)?;
            let loss = batch_loss(&mut tape, fwd.output, &labels, task)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("phase 1 epoch {} step {step}", epoch + 1),
                });
            }
            epoch_loss += value * idx.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = model.params().collect_grads(&vars, &grads);
            adam.step(model.params_mut().tensors_mut(), &grads, &names, lr)?;
            model.apply_bn_stats(&fwd.bn_stats);
        }
        stats.loss_history.push(epoch_loss / train.len() as f64);

        if valid.is_empty() {
            best = model.clone();
            stats.best_epoch = epoch + 1;
            continue;
        }
        let preds: Vec<Prediction> = model
            .infer(&valid, EVAL_BATCH)?
            .into_iter()
            .map(|i| i.prediction)
            .collect();
        let (metric, score) = selection_metric(task, &preds, &valid_labels)?;
        stats.metric = metric;
        stats.valid_history.push(score);
        if stats.best_valid.is_none_or(|b| metric.better(score, b)) {
            stats.best_valid = Some(score);
            stats.best_epoch = epoch + 1;
            best = model.clone();
        }
    }
    Ok((best, stats))
}

/// Frozen-model embeddings and predictions for `examples`.
pub fn queries(model: &GnnModel, examples: &[Example]) -> Result<Vec<Query>> {
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(model
        .infer(&refs, EVAL_BATCH)?
        .into_iter()
        .zip(examples)
        .map(|(inf, ex)| Query {
            id: ex.id,
            embedding: inf.embedding,
            prediction: inf.prediction,
            label: ex.label,
        })
        .collect())
}

/// Index over the eval-mode embeddings of the training split.
pub fn build_index(model: &GnnModel, dataset: &Dataset) -> Result<FlatIndex> {
    index_from_queries(&queries(model, dataset.train())?)
}

pub fn index_from_queries(train: &[Query]) -> Result<FlatIndex> {
    FlatIndex::build(
        train.iter().map(|q| q.embedding.clone()).collect(),
        train.iter().map(|q| (q.id, q.label)).collect(),
    )
}

/// One phase-2 run.
#[derive(Clone, Debug)]
pub struct AdapterRun {
    pub seed: u64,
    pub params: AdapterParams,
    pub stats: AdapterTrainStats,
    pub test_report: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TwoPhaseOutcome {
    pub model: GnnModel,
    pub phase1: Phase1Stats,
    pub index: FlatIndex,
    /// Number of times the index was built; always 1.
    pub index_builds: usize,
    pub base_test: MetricsReport,
    pub runs: Vec<AdapterRun>,
    /// Enhanced test metric aggregated over phase-2 seeds.
    pub enhanced_test: MetricsReport,
}

/// The full two-phase procedure: phase 1, one index build, then `seeds`
/// independent adapter runs against the frozen model.
pub fn train_two_phase(dataset: &Dataset, cfg: &RunConfig) -> Result<TwoPhaseOutcome> {
    let (model, phase1) = train_phase1(dataset, cfg)?;
    let train_q = queries(&model, dataset.train())?;
    let valid_q = queries(&model, dataset.valid())?;
    let test_q = queries(&model, dataset.test())?;
    let index = index_from_queries(&train_q)?;
    let counts = dataset.train_class_counts();
    let base_test = evaluate(&test_q, dataset.task(), EvalMode::Base, None, None, cfg, &counts)?;
    let mut runs = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds {
        let seed = cfg.phase2_seed(s);
        let (params, stats) = train_adapter(&index, &train_q, &valid_q, dataset.task(), &cfg.adapter(), seed)?;
        let test_report = evaluate(
            &test_q,
            dataset.task(),
            EvalMode::Enhanced,
            Some(&index),
            Some(&params),
            cfg,
            &counts,
        )?;
        runs.push(AdapterRun {
            seed,
            params,
            stats,
            test_report,
        });
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.test_report.clone()).collect();
    let enhanced_test = MetricsReport::aggregate(&reports)?;
    Ok(TwoPhaseOutcome {
        model,
        phase1,
        index,
        index_builds: 1,
        base_test,
        runs,
        enhanced_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..5).collect();
        let b = batches(&order, 2, 2);
        assert_eq!(b, vec![&[0, 1][..], &[2, 3, 4][..]]);
        let b = batches(&order, 2, 1);
        assert_eq!(b.len(), 3);
        let one = [7];
        assert_eq!(batches(&one, 4, 2), vec![&[7][..]]);
    }
}
