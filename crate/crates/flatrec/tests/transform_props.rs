//! Property tests for the transformation and metric primitives.

use std::collections::HashSet;

use proptest::prelude::*;

use flatrec::data::kfold_split;
use flatrec::distmetrics::kurtosis;
use flatrec::transform::{percentile_value, position, smoothed_percentile_value};
use flatrec::{Dataset, IndexRule, RatingScale, TransformSpec};

/// Position by sorting and scanning indices, independent of the counting
/// implementation under test.
fn sorted_scan_position(x: f64, profile: &[f64], rule: IndexRule) -> f64 {
    let mut sorted = profile.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let occupied: Vec<usize> = sorted
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == x)
        .map(|(i, _)| i + 1)
        .collect();
    match (occupied.first(), occupied.last()) {
        (Some(&first), Some(&last)) => match rule {
            IndexRule::First => first as f64,
            IndexRule::Last => last as f64,
            IndexRule::Median => (first + last) as f64 / 2.0,
        },
        _ => (sorted.iter().position(|&v| v > x).unwrap_or(sorted.len()) + 1) as f64,
    }
}

fn rule_strategy() -> impl Strategy<Value = IndexRule> {
    prop_oneof![
        Just(IndexRule::First),
        Just(IndexRule::Median),
        Just(IndexRule::Last),
    ]
}

fn scale_strategy() -> impl Strategy<Value = RatingScale<f64>> {
    prop_oneof![
        Just(RatingScale::five_star()),
        Just(RatingScale::from_range(0.5, 4.0, 0.5).unwrap()),
        Just(RatingScale::new(vec![1.0, 2.0, 3.0]).unwrap()),
    ]
}

/// A non-empty profile of scale levels plus one probe value from the scale.
fn profile_and_probe() -> impl Strategy<Value = (RatingScale<f64>, Vec<f64>, f64)> {
    (scale_strategy(), 1usize..40).prop_flat_map(|(scale, len)| {
        let n_levels = scale.len();
        (
            Just(scale),
            proptest::collection::vec(0..n_levels, len),
            0..n_levels,
        )
            .prop_map(|(scale, idxs, probe)| {
                let levels = scale.values().to_vec();
                let profile: Vec<f64> = idxs.into_iter().map(|i| levels[i]).collect();
                let x = levels[probe];
                (scale, profile, x)
            })
    })
}

proptest! {
    #[test]
    fn position_matches_the_sorted_scan_oracle(
        (_, profile, x) in profile_and_probe(),
        rule in rule_strategy(),
    ) {
        let got = position(x, &profile, rule).unwrap();
        let expected = sorted_scan_position(x, &profile, rule);
        prop_assert!((got - expected).abs() < 1e-12, "got {got}, oracle {expected}");
    }

    #[test]
    fn percentiles_stay_strictly_inside_the_open_interval(
        (_, profile, _) in profile_and_probe(),
        rule in rule_strategy(),
        pick in proptest::num::usize::ANY,
    ) {
        // the transforms only evaluate values present in the profile; an
        // absent probe above the maximum would sit at exactly 100
        let x = profile[pick % profile.len()];
        let p = percentile_value(x, &profile, rule).unwrap();
        prop_assert!(p > 0.0 && p < 100.0, "percentile {p} out of (0,100)");
    }

    #[test]
    fn percentiles_are_strictly_monotone_over_profile_values(
        (_, profile, _) in profile_and_probe(),
        rule in rule_strategy(),
    ) {
        let mut distinct: Vec<f64> = profile.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        for pair in distinct.windows(2) {
            let lo = percentile_value(pair[0], &profile, rule).unwrap();
            let hi = percentile_value(pair[1], &profile, rule).unwrap();
            prop_assert!(lo < hi, "{} -> {lo} vs {} -> {hi}", pair[0], pair[1]);
        }
    }

    #[test]
    fn index_rules_are_ordered_first_median_last(
        (_, profile, x) in profile_and_probe(),
    ) {
        let first = percentile_value(x, &profile, IndexRule::First).unwrap();
        let median = percentile_value(x, &profile, IndexRule::Median).unwrap();
        let last = percentile_value(x, &profile, IndexRule::Last).unwrap();
        prop_assert!(first <= median + 1e-12 && median <= last + 1e-12);
    }

    #[test]
    fn smoothing_equals_explicit_augmentation(
        (scale, profile, x) in profile_and_probe(),
        rule in rule_strategy(),
        k in 0u32..4,
    ) {
        let closed = smoothed_percentile_value(x, &profile, rule, k, &scale).unwrap();
        let mut augmented = profile.clone();
        for &level in scale.values() {
            for _ in 0..k {
                augmented.push(level);
            }
        }
        let explicit = percentile_value(x, &augmented, rule).unwrap();
        prop_assert!(
            (closed - explicit).abs() < 1e-9,
            "closed {closed} vs explicit {explicit} (k={k})"
        );
    }

    #[test]
    fn kurtosis_is_affine_invariant(
        values in proptest::collection::vec(-50.0f64..50.0, 4..60),
        a in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
        b in -10.0f64..10.0,
    ) {
        let base = kurtosis(&values);
        let mapped: Vec<f64> = values.iter().map(|&v| a * v + b).collect();
        let transformed = kurtosis(&mapped);
        match (base, transformed) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}"),
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "definedness differs: {x:?} vs {y:?}"),
        }
    }

    #[test]
    fn folds_partition_the_ratings_exactly(
        n_users in 2usize..8,
        n_items in 2usize..8,
        k in 2usize..5,
        seed in 0u64..1000,
    ) {
        let mut triples = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                triples.push((format!("u{u}"), format!("i{i}"), ((u + i) % 5 + 1) as f64));
            }
        }
        let n = triples.len();
        prop_assume!(k <= n);
        let dataset = Dataset::from_triples(triples, Some(RatingScale::five_star())).unwrap();
        let folds = kfold_split(&dataset, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);

        let key = |d: &Dataset<f64>| -> HashSet<(String, String)> {
            d.ratings()
                .iter()
                .map(|r| {
                    (
                        d.user_label(r.user).to_string(),
                        d.item_label(r.item).to_string(),
                    )
                })
                .collect()
        };
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for fold in &folds {
            let test = key(&fold.test);
            let train = key(&fold.train);
            prop_assert_eq!(test.len() + train.len(), n);
            prop_assert!(test.is_disjoint(&train));
            for t in &test {
                prop_assert!(seen.insert(t.clone()), "rating tested twice: {t:?}");
            }
            // balanced: fold sizes differ by at most one
            prop_assert!(test.len() >= n / k && test.len() <= n / k + 1);
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn spec_strings_round_trip_through_display(
        kind in 0usize..4,
        rule in rule_strategy(),
        user_oriented in proptest::bool::ANY,
        noshift in proptest::bool::ANY,
        k in 0u32..9,
    ) {
        use flatrec::{OffsetPolicy, Orientation};
        let orientation = if user_oriented { Orientation::User } else { Orientation::Item };
        let spec = match kind {
            0 => TransformSpec::Identity,
            1 => TransformSpec::ZScore {
                orientation,
                offset: if noshift { OffsetPolicy::Keep } else { OffsetPolicy::ShiftMinToZero },
            },
            2 => TransformSpec::Percentile { rule, orientation },
            _ => TransformSpec::Smoothed { rule, orientation, k },
        };
        let rendered = spec.to_string();
        let parsed: TransformSpec = rendered.parse().unwrap();
        prop_assert_eq!(parsed, spec, "via '{}'", rendered);
    }
}
