use graphret::adapter::{
    averaging_predict, cls_loss, cls_predict, combine, compute_attention, enhanced_predict, reg_predict, train_adapter,
    AdapterParams, AdapterTrainConfig, Query, Retrieved,
};
use graphret::autodiff::Tensor;
use graphret::gnn::Prediction;
use graphret::gradsuite::{adapter_inputs, rand_tensor};
use graphret::graph::{Label, Task};
use graphret::index::FlatIndex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, d: usize, dp: usize, k: usize) -> AdapterParams {
    AdapterParams::from_tensors(rand_tensor(rng, dp, d, 2.0), rand_tensor(rng, dp, d, 2.0), rand_tensor(rng, 1, k + 1, 2.0))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_a_distribution(seed in any::<u64>(), d in 1usize..6, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&mut rng, d, 3, k);
        for (q, set) in adapter_inputs(&mut rng, 4, d, k, Some(3)) {
            let attn = compute_attention(&params, &q.embedding, &set).unwrap();
            prop_assert_eq!(attn.len(), k + 1);
            prop_assert!(attn.iter().all(|a| a.is_finite() && *a >= 0.0));
            prop_assert!((attn.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shifting_phi_leaves_attention_unchanged(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let (d, dp, k) = (4, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&mut rng, d, dp, k);
        let phi: Vec<f64> = params.phi().data().iter().map(|p| p + shift).collect();
        let shifted = AdapterParams::from_tensors(
            params.w1().clone(),
            params.w2().clone(),
            Tensor::new(1, k + 1, phi).unwrap(),
        )
        .unwrap();
        for (q, set) in adapter_inputs(&mut rng, 4, d, k, None) {
            let a = compute_attention(&params, &q.embedding, &set).unwrap();
            let b = compute_attention(&shifted, &q.embedding, &set).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_neighbours_permutes_their_weights(seed in any::<u64>()) {
        // With φ constant over slots 1..k the neighbour order is irrelevant.
        let (d, dp, k) = (4, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = vec![rng.gen_range(-1.0..1.0), 0.3, 0.3, 0.3, 0.3];
        let params = AdapterParams::from_tensors(
            rand_tensor(&mut rng, dp, d, 1.0),
            rand_tensor(&mut rng, dp, d, 1.0),
            Tensor::new(1, k + 1, phi).unwrap(),
        )
        .unwrap();
        for (q, set) in adapter_inputs(&mut rng, 3, d, k, Some(3)) {
            let a = compute_attention(&params, &q.embedding, &set).unwrap();
            let rev: Vec<Retrieved> = set.iter().rev().cloned().collect();
            let b = compute_attention(&params, &q.embedding, &rev).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
            for i in 1..=k {
                prop_assert!((a[i] - b[k + 1 - i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_adapter_equals_averaging(seed in any::<u64>(), k in 1usize..6, regression in any::<bool>()) {
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AdapterParams::zeros(d, 2, k).unwrap();
        let classes = (!regression).then_some(4);
        for (q, set) in adapter_inputs(&mut rng, 4, d, k, classes) {
            let a = enhanced_predict(&params, &q, &set).unwrap();
            let b = averaging_predict(&q.prediction, &set).unwrap();
            match (a, b) {
                (Prediction::Probs(a), Prediction::Probs(b)) => {
                    for (x, y) in a.iter().zip(&b) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                }
                (Prediction::Value(a), Prediction::Value(b)) => prop_assert!((a - b).abs() < 1e-12),
                _ => prop_assert!(false, "prediction kinds differ"),
            }
        }
    }

    #[test]
    fn mixed_outputs_stay_in_range(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&mut rng, 3, 3, k);
        for (q, set) in adapter_inputs(&mut rng, 4, 3, k, Some(4)) {
            let attn = compute_attention(&params, &q.embedding, &set).unwrap();
            let Prediction::Probs(mixed) = combine(&attn, &q.prediction, &set).unwrap() else {
                unreachable!()
            };
            prop_assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let Prediction::Probs(l_x) = &q.prediction else { unreachable!() };
            let labels: Vec<usize> = set.iter().map(|r| r.label.class().unwrap()).collect();
            for c in 0..4 {
                let loss = cls_loss(&attn, l_x, &labels, c).unwrap();
                prop_assert!((loss - (-mixed[c].ln())).abs() < 1e-9);
            }
        }
        for (q, set) in adapter_inputs(&mut rng, 4, 3, k, None) {
            let attn = compute_attention(&params, &q.embedding, &set).unwrap();
            let Prediction::Value(own) = q.prediction else { unreachable!() };
            let vals: Vec<f64> = set.iter().map(|r| r.label.value().unwrap()).collect();
            let y = reg_predict(&attn, own, &vals).unwrap();
            let lo = vals.iter().copied().fold(own, f64::min);
            let hi = vals.iter().copied().fold(own, f64::max);
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }
}

#[test]
fn cls_predict_hand_example() {
    let (mixed, best) = cls_predict(&[0.5, 0.25, 0.25], &[0.2, 0.8], &[0, 0]).unwrap();
    assert!((mixed[0] - 0.6).abs() < 1e-15 && (mixed[1] - 0.4).abs() < 1e-15);
    assert_eq!(best, 0);
}

/// Four clustered classes. `trust_base` decides whether the base
/// prediction or the index labels carry the truth; the other source is
/// wrong.
fn scenario(trust_base: bool, seed: u64) -> (FlatIndex, Vec<Query>, Vec<Query>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let make = |rng: &mut ChaCha8Rng, id: u64| {
        let c = rng.gen_range(0..4usize);
        let mut emb: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect();
        emb[c] += 3.0;
        let predicted = if trust_base { c } else { (c + 1) % 4 };
        let probs = (0..4).map(|j| if j == predicted { 0.85 } else { 0.05 }).collect();
        let stored = if trust_base { rng.gen_range(0..4u32) } else { c as u32 };
        let q = Query {
            id,
            embedding: emb,
            prediction: Prediction::Probs(probs),
            label: Label::Class(c as u32),
        };
        (q, stored)
    };
    let train: Vec<(Query, u32)> = (0..160).map(|i| make(&mut rng, i)).collect();
    let valid: Vec<Query> = (160..220).map(|i| make(&mut rng, i).0).collect();
    let index = FlatIndex::build(
        train.iter().map(|(q, _)| q.embedding.clone()).collect(),
        train.iter().map(|(q, s)| (q.id, Label::Class(*s))).collect(),
    )
    .unwrap();
    (index, train.into_iter().map(|(q, _)| q).collect(), valid)
}

fn mean_self_weight(params: &AdapterParams, index: &FlatIndex, queries: &[Query], k: usize) -> f64 {
    let total: f64 = queries
        .iter()
        .map(|q| {
            let set: Vec<Retrieved> = index
                .search(&q.embedding, k)
                .unwrap()
                .iter()
                .map(|h| Retrieved {
                    example_id: h.entry.example_id,
                    key: h.entry.key.clone(),
                    label: h.entry.label,
                    distance: h.distance,
                })
                .collect();
            compute_attention(params, &q.embedding, &set).unwrap()[0]
        })
        .sum();
    total / queries.len() as f64
}

#[test]
fn training_moves_attention_toward_the_reliable_source() {
    // No validation split, so the last epoch is kept. Validation accuracy
    // saturates early here and would freeze the parameters near init.
    let cfg = AdapterTrainConfig {
        k: 3,
        epochs: 60,
        ..AdapterTrainConfig::default()
    };
    let uniform = 1.0 / 4.0;

    let (index, train, valid) = scenario(false, 1);
    let (params, stats) = train_adapter(&index, &train, &[], Task::Multiclass(4), &cfg, 0).unwrap();
    let w = mean_self_weight(&params, &index, &valid, 3);
    assert!(w < uniform / 2.0, "self weight {w} with reliable neighbours");
    assert!(stats.loss_history.last().unwrap() < &stats.loss_history[0]);
    assert_eq!(stats.best_epoch, cfg.epochs);
    assert_eq!(stats.dropout_violations, 0);

    let (index, train, valid) = scenario(true, 2);
    let (params, stats) = train_adapter(&index, &train, &[], Task::Multiclass(4), &cfg, 0).unwrap();
    let w = mean_self_weight(&params, &index, &valid, 3);
    assert!(w > 0.5, "self weight {w} with reliable base predictions");
    assert!(stats.loss_history.last().unwrap() < &stats.loss_history[0]);
}
