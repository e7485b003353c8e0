use std::collections::HashMap;

use graphret::adapter::Query;
use graphret::gnn::Prediction;
use graphret::graph::synth::{generate_motif, MotifSpec};
use graphret::graph::{Label, Task};
use graphret::index::{l2_distance, FlatIndex};
use graphret::pipeline::{baseline_majority, baseline_retrieval, train_phase1, train_two_phase, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.m1 = 4;
    cfg.m2 = 4;
    cfg.seeds = 1;
    cfg.seed = 3;
    cfg.model.hidden_dim = 8;
    cfg
}

#[test]
fn two_phase_is_deterministic_and_leaves_the_model_frozen() {
    let ds = generate_motif(&MotifSpec::new(4, 20, 3, 0.25, 11)).unwrap();
    let cfg = small_config();
    let a = train_two_phase(&ds, &cfg).unwrap();
    let b = train_two_phase(&ds, &cfg).unwrap();
    assert_eq!(a.model.checksum(), b.model.checksum());
    assert_eq!(a.runs[0].params.checksum(), b.runs[0].params.checksum());
    assert_eq!(a.enhanced_test, b.enhanced_test);
    assert_eq!(a.index, b.index);
    assert_eq!(a.index_builds, 1);

    let (alone, _) = train_phase1(&ds, &cfg).unwrap();
    assert_eq!(a.model.checksum(), alone.checksum());
    assert_eq!(a.index.len(), ds.train().len());
}

/// Clustered keys with a few labels per cluster so votes disagree.
fn voting_fixture(seed: u64) -> (FlatIndex, Vec<Query>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::new();
    let mut payloads = Vec::new();
    for id in 0..200u64 {
        let c = rng.gen_range(0..5u32);
        let noisy = if rng.gen_bool(0.3) { rng.gen_range(0..5u32) } else { c };
        keys.push(vec![c as f64 + rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)]);
        payloads.push((id, Label::Class(noisy)));
    }
    let queries = (0..60)
        .map(|i| Query {
            id: 1000 + i,
            embedding: vec![rng.gen_range(-0.5..4.5), rng.gen_range(-0.8..0.8)],
            prediction: Prediction::Probs(vec![0.2; 5]),
            label: Label::Class(0),
        })
        .collect();
    (FlatIndex::build(keys, payloads).unwrap(), queries)
}

/// Sort every entry by distance, count the first `n` labels, break modal
/// ties toward the label seen first.
fn vote_oracle(index: &FlatIndex, q: &[f64], n: usize) -> usize {
    let mut all: Vec<(f64, u64, u32)> = index
        .entries()
        .iter()
        .map(|e| (l2_distance(q, &e.key).unwrap(), e.example_id, e.label.class().unwrap() as u32))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes: HashMap<u32, (usize, usize)> = HashMap::new();
    for (rank, &(_, _, c)) in all.iter().take(n).enumerate() {
        votes.entry(c).or_insert((0, rank)).0 += 1;
    }
    let best = votes.values().map(|v| v.0).max().unwrap();
    votes
        .iter()
        .filter(|(_, v)| v.0 == best)
        .min_by_key(|(_, v)| v.1)
        .map(|(&c, _)| c as usize)
        .unwrap()
}

#[test]
fn majority_vote_matches_brute_force() {
    for seed in 0..5 {
        let (index, queries) = voting_fixture(seed);
        for n in [1, 2, 5, 9] {
            let preds = baseline_majority(&index, &queries, Task::Multiclass(5), n).unwrap();
            for (q, p) in queries.iter().zip(&preds) {
                assert_eq!(p.argmax(), Some(vote_oracle(&index, &q.embedding, n)), "seed {seed} n {n} query {}", q.id);
            }
        }
    }
}

#[test]
fn single_vote_is_the_retrieval_baseline() {
    let (index, queries) = voting_fixture(9);
    let a = baseline_majority(&index, &queries, Task::Multiclass(5), 1).unwrap();
    assert_eq!(a, baseline_retrieval(&index, &queries, Task::Multiclass(5)).unwrap());
    for (q, p) in queries.iter().zip(&a) {
        let nearest = index
            .entries()
            .iter()
            .min_by(|x, y| {
                l2_distance(&q.embedding, &x.key)
                    .unwrap()
                    .total_cmp(&l2_distance(&q.embedding, &y.key).unwrap())
            })
            .unwrap();
        assert_eq!(p.argmax(), nearest.label.class());
    }
}

#[test]
fn retrieval_does_not_hurt_on_the_motif_benchmark() {
    // A short phase 1 leaves headroom for the adapter. With a long one the
    // model fits the training set and the adapter has nothing to learn.
    let ds = generate_motif(&MotifSpec::new(20, 200, 5, 0.25, 7)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.m1 = 15;
    cfg.model.hidden_dim = 32;
    let outcome = train_two_phase(&ds, &cfg).unwrap();
    let base = outcome.base_test.value;
    assert_eq!(outcome.runs.len(), 5);
    let enhanced = outcome.enhanced_test.mean;
    assert!(enhanced >= base - 0.005, "enhanced {enhanced} vs base {base}");
}
