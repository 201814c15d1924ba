use std::collections::HashSet;

use fedsim_core::data::{
    alternating_order, compute_sizes, generate_blobs, generate_blobs_test, validation_count, ClassAssignment,
    FederatedSplit, SizeDistribution,
};
use fedsim_core::simulator::SpeedGroup;
use proptest::prelude::*;

fn distribution() -> impl Strategy<Value = SizeDistribution> {
    prop_oneof![
        Just(SizeDistribution::Uniform),
        (0.3f64..0.99).prop_map(|decay| SizeDistribution::Skewed { decay }),
        (0.5f64..2.5).prop_map(|exponent| SizeDistribution::Powerlaw { exponent }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sizes_sum_to_total_and_descend(dist in distribution(), n in 1usize..20, extra in 0usize..5000) {
        let total = n + extra;
        let weights: Vec<f64> = (0..n)
            .map(|k| match dist {
                SizeDistribution::Uniform => 1.0,
                SizeDistribution::Skewed { decay } => decay.powi(k as i32),
                SizeDistribution::Powerlaw { exponent } => ((k + 1) as f64).powf(-exponent),
            })
            .collect();
        let smallest_share = total as f64 * weights[n - 1] / weights.iter().sum::<f64>();
        let sizes = match compute_sizes(&dist, n, total) {
            Ok(sizes) => sizes,
            Err(_) => {
                // only a learner whose exact share is below one sample may be refused
                prop_assert!(smallest_share < 1.0, "refused with smallest share {}", smallest_share);
                return Ok(());
            }
        };
        prop_assert_eq!(sizes.len(), n);
        prop_assert_eq!(sizes.iter().sum::<usize>(), total);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn split_is_disjoint_total_and_stratified(
        n in 2usize..8, classes_per in 1usize..4, fast in 0usize..8, seed in 0u64..500,
    ) {
        let c = 4;
        let per_class = 300;
        let pool = generate_blobs(3, c, per_class, 0.5, seed);
        let test = generate_blobs_test(3, c, 10, 0.5, seed);
        let total = 600.min(per_class * c);
        let sizes = compute_sizes(&SizeDistribution::Uniform, n, total).unwrap();
        let assignment = ClassAssignment::non_iid(n, classes_per.min(c), c).unwrap();
        let groups: Vec<SpeedGroup> =
            (0..n).map(|k| if k < fast.min(n) { SpeedGroup::Fast } else { SpeedGroup::Slow }).collect();
        let order = alternating_order(&groups);
        let split = FederatedSplit::build(&pool, test, &sizes, &assignment, &order, 0.05, seed).unwrap();

        let mut seen = HashSet::new();
        let mut used = 0;
        for (rank, &id) in order.iter().enumerate() {
            let l = &split.per_learner[id];
            prop_assert_eq!(l.train.len() + l.validation.len(), sizes[rank]);
            for &row in l.train_rows.iter().chain(&l.validation_rows) {
                prop_assert!(seen.insert(row), "row {} handed out twice", row);
                prop_assert!(assignment.per_learner_classes[rank].contains(&pool.labels[row]));
            }
            used += sizes[rank];
            let train = l.train.class_histogram().0;
            let val = l.validation.class_histogram().0;
            for class in 0..c {
                prop_assert_eq!(val[class], validation_count(train[class] + val[class], 0.05));
            }
        }
        prop_assert_eq!(seen.len(), used);
    }
}

#[test]
fn alternating_order_interleaves_groups() {
    use SpeedGroup::*;
    let order = alternating_order(&[Fast, Fast, Fast, Slow, Slow, Slow]);
    assert_eq!(order, vec![0, 3, 1, 4, 2, 5]);
    let groups: Vec<SpeedGroup> = order.iter().map(|&k| [Fast, Fast, Fast, Slow, Slow, Slow][k]).collect();
    assert_eq!(groups, vec![Fast, Slow, Fast, Slow, Fast, Slow]);
}

#[test]
fn validation_rounding() {
    assert_eq!(validation_count(100, 0.05), 5);
    assert_eq!(validation_count(10, 0.05), 1);
    assert_eq!(validation_count(30, 0.05), 2);
    assert_eq!(validation_count(1, 0.05), 0);
    assert_eq!(validation_count(2, 0.9), 1);
}
