use graphret::metrics::{
    accuracy, bucket_of, group_labels, group_of, longtail_class_report, mae, roc_auc, value_bucket_report,
};
use proptest::prelude::*;

/// Pairwise definition: the fraction of positive/negative pairs ranked
/// correctly, ties counting half.
fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // Coarse scores so ties are common.
    prop::collection::vec((0u8..6, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 5.0, l)).unzip())
}

proptest! {
    #[test]
    fn auc_matches_pairwise_definition((scores, labels) in scored_labels()) {
        let got = roc_auc(&scores, &labels).unwrap();
        prop_assert!((got - auc_oracle(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps((scores, labels) in scored_labels()) {
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn flipping_labels_complements_auc((scores, labels) in scored_labels()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bucket_maes_recombine_to_the_headline(
        rows in prop::collection::vec((0.0f64..60.0, -5.0f64..5.0), 1..80),
    ) {
        let edges = [0.0, 10.0, 20.0, 30.0];
        let targets: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let preds: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
        let report = value_bucket_report(&preds, &targets, &edges).unwrap();
        let n: usize = report.groups.iter().map(|g| g.count).sum();
        prop_assert_eq!(n, rows.len());
        let weighted: f64 = report.groups.iter().map(|g| g.value * g.count as f64).sum::<f64>() / n as f64;
        prop_assert!((weighted - report.value).abs() < 1e-12);
        prop_assert!((report.value - mae(&preds, &targets).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn class_groups_recombine_to_accuracy(
        rows in prop::collection::vec((0usize..6, 0usize..6), 1..80),
        counts in prop::collection::vec(1usize..400, 6),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = rows.into_iter().unzip();
        let boundaries = [100, 300];
        let report = longtail_class_report(&preds, &labels, &counts, &boundaries).unwrap();
        let n: usize = report.groups.iter().map(|g| g.count).sum();
        prop_assert_eq!(n, labels.len());
        let weighted: f64 = report.groups.iter().map(|g| g.value * g.count as f64).sum::<f64>() / n as f64;
        prop_assert!((weighted - accuracy(&preds, &labels).unwrap()).abs() < 1e-12);
        for g in &report.groups {
            let idx = group_labels(&boundaries).iter().position(|l| *l == g.label).unwrap();
            let members: Vec<usize> = (0..labels.len()).filter(|&i| group_of(counts[labels[i]], &boundaries) == idx).collect();
            prop_assert_eq!(g.count, members.len());
        }
    }
}

#[test]
fn bucket_edges_are_half_open() {
    let edges = [0.0, 10.0, 20.0];
    assert_eq!(bucket_of(-0.1, &edges), None);
    assert_eq!(bucket_of(0.0, &edges), Some(0));
    assert_eq!(bucket_of(9.999, &edges), Some(0));
    assert_eq!(bucket_of(10.0, &edges), Some(1));
    assert_eq!(bucket_of(1e9, &edges), Some(2));
}

#[test]
fn auc_rejects_degenerate_input() {
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    assert!(roc_auc(&[0.1], &[true, false]).is_err());
}
