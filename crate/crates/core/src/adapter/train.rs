use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{enhanced_predict, retrieve_with_dropout, AdapterBatch, AdapterParams, Query, Retrieved};
use crate::autodiff::{lr_at, AdamState, Tape};
use crate::error::{Error, Result};
use crate::graph::{Label, Task};
use crate::index::FlatIndex;
use crate::metrics::{selection_metric, Metric};

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterTrainConfig {
    pub k: usize,
    /// Projection width `d'`; the embedding width when unset.
    pub proj_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            proj_dim: None,
            epochs: 200,
            batch_size: 32,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterTrainStats {
    pub metric: Metric,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
    pub valid_history: Vec<f64>,
    pub loss_history: Vec<f64>,
    /// Retrieval sets inspected for the query's own id, and how many
    /// contained it.
    pub dropout_checks: usize,
    pub dropout_violations: usize,
}

/// Trains `W1`, `W2` and `φ` on precomputed frozen-model outputs.
///
/// Training retrievals use dropout; validation retrievals do not. The
/// parameters with the best validation score are returned, earlier epochs
/// winning ties. With an empty validation split the last epoch is kept.
pub fn train_adapter(
    index: &FlatIndex,
    train: &[Query],
    valid: &[Query],
    task: Task,
    cfg: &AdapterTrainConfig,
    seed: u64,
) -> Result<(AdapterParams, AdapterTrainStats)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("adapter training needs epochs, batch_size and lr > 0".into()));
    }
    if train.len() < cfg.k + 1 {
        return Err(Error::InvalidDataset(format!(
            "train split has {} examples, adapter needs at least k + 1 = {}",
            train.len(),
            cfg.k + 1
        )));
    }
    let dim = index.dim();
    let train_sets = train
        .iter()
        .map(|q| retrieve_with_dropout(index, &q.embedding, cfg.k, true, Some(q.id)))
        .collect::<Result<Vec<_>>>()?;
    let valid_sets = valid
        .iter()
        .map(|q| retrieve_with_dropout(index, &q.embedding, cfg.k, false, None))
        .collect::<Result<Vec<_>>>()?;
    let valid_labels: Vec<Label> = valid.iter().map(|q| q.label).collect();

    let mut params = AdapterParams::init(dim, cfg.proj_dim.unwrap_or(dim), cfg.k, seed)?;
    let mut adam = AdamState::new(params.store().tensors(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let names = params.store().names().to_vec();

    let mut stats = AdapterTrainStats {
        metric: Metric::for_task(task),
        best_epoch: 0,
        best_valid: None,
        valid_history: Vec::with_capacity(cfg.epochs),
        loss_history: Vec::with_capacity(cfg.epochs),
        dropout_checks: 0,
        dropout_violations: 0,
    };
    let mut best = params.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = lr_at(epoch, cfg.lr);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<(&Query, &[Retrieved])> = chunk
                .iter()
                .map(|&i| (&train[i], train_sets[i].as_slice()))
                .collect();
            for (q, set) in &items {
                stats.dropout_checks += 1;
                if set.iter().any(|r| r.example_id == q.id) {
                    stats.dropout_violations += 1;
                }
            }
            let batch = AdapterBatch::new(&items)?;
            let mut tape = Tape::new();
            let vars = params.store().bind(&mut tape);
            let loss = batch.loss(&mut tape, vars[0], vars[1], vars[2])?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("adapter epoch {} step {step}", epoch + 1),
                });
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = params.store().collect_grads(&vars, &grads);
            adam.step(params.store_mut().tensors_mut(), &grads, &names, lr)?;
        }
        stats.loss_history.push(epoch_loss / train.len() as f64);

        if valid.is_empty() {
            best = params.clone();
            stats.best_epoch = epoch + 1;
            continue;
        }
        let preds = valid
            .iter()
            .zip(&valid_sets)
            .map(|(q, s)| enhanced_predict(&params, q, s))
            .collect::<Result<Vec<_>>>()?;
        let (metric, score) = selection_metric(task, &preds, &valid_labels)?;
        stats.metric = metric;
        stats.valid_history.push(score);
        if stats.best_valid.is_none_or(|b| metric.better(score, b)) {
            stats.best_valid = Some(score);
            stats.best_epoch = epoch + 1;
            best = params.clone();
        }
    }
    Ok((best, stats))
}
