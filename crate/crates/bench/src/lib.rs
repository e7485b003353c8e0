//! Fixtures shared by the benchmarks. All are deterministic.

use graphret::adapter::{AdapterParams, Query, Retrieved};
use graphret::gnn::{GnnConfig, GnnModel, GraphBatch};
use graphret::gradsuite::adapter_inputs;
use graphret::graph::synth::{generate_motif, MotifSpec};
use graphret::graph::{Dataset, Example, Label};
use graphret::index::FlatIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform keys of width `dim` with class payloads.
pub fn random_index(n: usize, dim: usize, seed: u64) -> FlatIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let payloads = (0..n as u64).map(|i| (i, Label::Class((i % 10) as u32))).collect();
    FlatIndex::build(keys, payloads).expect("valid fixture")
}

pub fn random_query(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A motif dataset, a freshly initialised model for it and one training
/// batch of `batch_size` examples.
pub struct GnnFixture {
    pub dataset: Dataset,
    pub model: GnnModel,
    pub batch: GraphBatch,
    pub labels: Vec<Label>,
}

pub fn gnn_fixture(config: GnnConfig, batch_size: usize) -> GnnFixture {
    let dataset = generate_motif(&MotifSpec::new(10, 40, 5, 0.0, 1)).expect("valid spec");
    let model = GnnModel::for_dataset(config, &dataset, 0).expect("valid config");
    let examples: Vec<&Example> = dataset.train().iter().take(batch_size).collect();
    let labels = examples.iter().map(|e| e.label).collect();
    let batch = GraphBatch::new(&examples).expect("non-empty batch");
    GnnFixture {
        dataset,
        model,
        batch,
        labels,
    }
}

/// Adapter parameters plus `n` queries with `k` neighbours each.
pub fn adapter_fixture(n: usize, dim: usize, k: usize) -> (AdapterParams, Vec<(Query, Vec<Retrieved>)>) {
    let params = AdapterParams::init(dim, dim, k, 0).expect("positive dims");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (params, adapter_inputs(&mut rng, n, dim, k, Some(10)))
}
