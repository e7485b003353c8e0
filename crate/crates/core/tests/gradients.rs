use graphret::gradsuite::{adapter_case, gcn_case, gin_case, head_case, run_suite, COMPONENTS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_component_matches_finite_differences(seed in any::<u64>(), case in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for report in [
            gcn_case(&mut rng).unwrap(),
            gin_case(&mut rng).unwrap(),
            head_case(&mut rng, case).unwrap(),
            adapter_case(&mut rng, Some(2 + case)).unwrap(),
            adapter_case(&mut rng, None).unwrap(),
        ] {
            prop_assert!(report.passed, "max rel err {}", report.max_rel_err);
        }
    }
}

#[test]
fn suite_covers_all_components() {
    let results = run_suite(11, 2).unwrap();
    let names: Vec<&str> = results.iter().map(|r| r.name).collect();
    assert_eq!(names, COMPONENTS);
    assert!(results.iter().all(|r| r.instances == 2 && r.failed == 0));
}
