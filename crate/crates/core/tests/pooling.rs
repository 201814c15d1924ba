use fedsim_core::nn::ConfusionMatrix;
use fedsim_core::weighting::{dvw_weight, micro_f1, pool_confusion, EvalReport, WeightingError};
use proptest::prelude::*;

fn evaluations() -> impl Strategy<Value = (usize, Vec<Vec<(usize, usize)>>)> {
    (2usize..6).prop_flat_map(|c| {
        let pair = (0..c, 0..c);
        (Just(c), prop::collection::vec(prop::collection::vec(pair, 0..30), 1..6))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pooled_f1_equals_concatenated_predictions((c, per_site) in evaluations()) {
        let report: Vec<(usize, ConfusionMatrix)> = per_site
            .iter()
            .enumerate()
            .map(|(k, pairs)| {
                let mut cm = ConfusionMatrix::new(c);
                for &(a, p) in pairs {
                    cm.record(a, p);
                }
                (k, cm)
            })
            .collect();
        let all: Vec<(usize, usize)> = per_site.concat();
        let report = EvalReport::new(report).unwrap();
        let pooled = pool_confusion(&report).unwrap();
        prop_assert_eq!(pooled.total(), all.len() as u64);
        if all.is_empty() {
            prop_assert!(dvw_weight(&report).is_err());
            return Ok(());
        }
        let correct = all.iter().filter(|(a, p)| a == p).count() as u64;
        let wrong = all.len() as u64 - correct;
        // each miss is one false positive and one false negative
        let f1 = (2 * correct) as f64 / (2 * correct + 2 * wrong) as f64;
        prop_assert_eq!(dvw_weight(&report).unwrap().value(), f1);
        prop_assert_eq!(micro_f1(&pooled).unwrap(), correct as f64 / all.len() as f64);
    }
}

#[test]
fn duplicate_evaluator_rejected() {
    let cm = ConfusionMatrix::new(2);
    assert!(matches!(
        EvalReport::new(vec![(3, cm.clone()), (3, cm)]),
        Err(WeightingError::DuplicateEvaluator(3))
    ));
}
