use std::collections::BTreeMap;

use fedsim_core::controller::{audit_recompute, Controller, ControllerError, UpdateRequest};
use fedsim_core::nn::{Matrix, ParameterSet};
use fedsim_core::weighting::ContributionValue;
use proptest::prelude::*;

fn params(values: &[f64]) -> ParameterSet {
    ParameterSet::new(vec![
        ("a".into(), Matrix::from_vec(1, 2, values[..2].to_vec()).unwrap()),
        ("b".into(), Matrix::from_vec(1, 1, values[2..3].to_vec()).unwrap()),
    ])
    .unwrap()
}

fn request(learner: usize, values: &[f64], steps: u64) -> UpdateRequest {
    UpdateRequest {
        learner_id: learner,
        params: params(values),
        local_steps: steps,
        local_train_size: 10,
        local_validation_cm: None,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Async {
        learner: usize,
        values: Vec<f64>,
        p: f64,
        steps: u64,
    },
    Sync {
        entries: Vec<(usize, Vec<f64>, f64)>,
    },
}

fn op() -> impl Strategy<Value = Op> {
    let values = || prop::collection::vec(-100.0f64..100.0, 3);
    prop_oneof![
        8 => (0usize..6, values(), 0.01f64..50.0, 1u64..20)
            .prop_map(|(learner, values, p, steps)| Op::Async { learner, values, p, steps }),
        1 => prop::collection::btree_map(0usize..6, (values(), 0.01f64..50.0), 1..5).prop_map(|m| Op::Sync {
            entries: m.into_iter().map(|(k, (v, p))| (k, v, p)).collect(),
        }),
    ]
}

fn oracle(cache: &BTreeMap<usize, (f64, Vec<f64>)>) -> Vec<f64> {
    let total: f64 = cache.values().map(|(p, _)| p).sum();
    (0..3)
        .map(|i| cache.values().map(|(p, v)| p * v[i]).sum::<f64>() / total)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cached_model_tracks_full_recompute(ops in prop::collection::vec(op(), 1..120)) {
        let mut ctl = Controller::from_params(params(&[0.0; 3]));
        let mut cache: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
        let mut steps = 0;
        for (i, op) in ops.into_iter().enumerate() {
            match op {
                Op::Async { learner, values, p, steps: s } => {
                    ctl.handle_async_update(request(learner, &values, s), ContributionValue(p)).unwrap();
                    cache.insert(learner, (p, values));
                    steps += s;
                }
                Op::Sync { entries } => {
                    let round = entries
                        .iter()
                        .map(|(k, v, p)| (request(*k, v, 1), ContributionValue(*p)))
                        .collect();
                    ctl.handle_sync_round(round).unwrap();
                    cache = entries.into_iter().map(|(k, v, p)| (k, (p, v))).collect();
                    steps += cache.len() as u64;
                }
            }
            prop_assert_eq!(ctl.version(), i as u64 + 1);
            prop_assert_eq!(ctl.committed_steps(), steps);
            let expected = oracle(&cache);
            let audit = audit_recompute(ctl.state()).unwrap().flatten();
            for ((got, want), audited) in ctl.community_params().flatten().iter().zip(&expected).zip(&audit) {
                prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
                prop_assert!((got - audited).abs() <= 1e-9 * audited.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejected_update_leaves_state_untouched(p in 0.5f64..5.0, values in prop::collection::vec(-5.0f64..5.0, 3)) {
        let mut ctl = Controller::from_params(params(&[0.0; 3]));
        ctl.handle_async_update(request(0, &values, 1), ContributionValue(p)).unwrap();
        let before = ctl.community();
        // zero steps and a withdrawal to zero total weight are both refused
        prop_assert!(matches!(
            ctl.handle_async_update(request(1, &values, 0), ContributionValue(1.0)),
            Err(ControllerError::NoLocalSteps(1))
        ));
        prop_assert!(ctl.handle_async_update(request(0, &values, 1), ContributionValue(0.0)).is_err());
        prop_assert_eq!(ctl.community(), before);
    }
}
