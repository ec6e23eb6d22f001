use std::collections::BTreeSet;

use proptest::prelude::*;

use osattr::feature_store::{
    apply_split, l2_normalize, merge, read_feature_set, subsample_per_class, write_feature_set, Normalization,
    SplitCounts, SplitSpec,
};
use osattr::FeatureSet;

const GENS: [&str; 4] = ["g0", "g1", "g2", "g3"];

fn arb_set() -> impl Strategy<Value = FeatureSet> {
    (1usize..6, 0usize..30, 0usize..=GENS.len(), -1i32..12).prop_flat_map(|(dim, n, ng, layer)| {
        (
            prop::collection::vec(-1e6f32..1e6, n * dim),
            prop::collection::vec(0..=ng as i32, n),
        )
            .prop_map(move |(f, l)| {
                let gens = GENS[..ng].iter().map(|s| s.to_string()).collect();
                FeatureSet::new(f, dim, l, gens, "bb", layer, Normalization::None).unwrap()
            })
    })
}

/// Pool with `per_class` rows of real and each of the four generators.
fn pool(per_class: usize) -> FeatureSet {
    let mut f = Vec::new();
    let mut l = Vec::new();
    for c in 0..=GENS.len() {
        for i in 0..per_class {
            f.extend([c as f32 + 1.0, i as f32]);
            l.push(c as i32);
        }
    }
    FeatureSet::new(f, 2, l, GENS.iter().map(|s| s.to_string()).collect(), "bb", 0, Normalization::None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn featset_roundtrip_is_bit_exact(set in arb_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.featset");
        write_feature_set(&set, &path).unwrap();
        let back = read_feature_set(&path).unwrap();
        let bits = |s: &FeatureSet| s.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&set), bits(&back));
        prop_assert_eq!(&set, &back);
        prop_assert_eq!(FeatureSet::from_bytes(&set.to_bytes().unwrap()).unwrap(), set);
    }

    #[test]
    fn l2_normalize_is_idempotent(set in arb_set()) {
        prop_assume!(set.count() > 0);
        prop_assume!((0..set.count()).all(|i| set.row(i).iter().any(|&v| v != 0.0)));
        let once = l2_normalize(&set).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.features().iter().zip(twice.features()) {
            prop_assert!((f64::from(*a) - f64::from(*b)).abs() <= 1e-12);
        }
        for i in 0..once.count() {
            let n: f64 = once.row(i).iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn split_partitions_are_disjoint_and_pure(
        per_class in 5usize..40,
        seed in any::<u64>(),
        val in 0.0f64..0.5,
        test in 0.0f64..0.5,
        cap in 3usize..60,
    ) {
        let set = pool(per_class);
        let mut spec = SplitSpec::new(&GENS[..2], &GENS[2..], seed);
        spec.val_fraction = val;
        spec.test_fraction = test;
        spec.per_class_counts = SplitCounts { seen_real: cap, seen_fake_total: 2 * cap, unseen_fake_total: 2 * cap };
        let p = apply_split(&set, &spec).unwrap();
        prop_assert_eq!(&p, &apply_split(&set, &spec).unwrap());

        let r = &p.rows;
        let all: Vec<usize> = [&r.train, &r.val, &r.test_seen, &r.test_unseen].iter().flat_map(|v| v.iter().copied()).collect();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        prop_assert_eq!(unique.len(), all.len());
        // each class draws min(cap, available) rows
        let drawn = 3 * cap.min(per_class) + 2 * cap.min(per_class);
        prop_assert_eq!(all.len(), drawn);
        prop_assert_eq!(p.train.count() + p.val.count() + p.test_seen.count() + p.test_unseen.count(), drawn);
        // partition contents match the recorded source rows
        for (part, rows) in [(&p.train, &r.train), (&p.test_unseen, &r.test_unseen)] {
            for (i, &src) in rows.iter().enumerate() {
                prop_assert_eq!(part.row(i), set.row(src));
            }
        }
        prop_assert_eq!(p.train.generator_names(), &GENS[..2]);
        prop_assert_eq!(p.test_unseen.generator_names(), &GENS[2..]);
    }

    #[test]
    fn subsample_is_exact_subset(per_class in 1usize..20, n in 0usize..20, seed in any::<u64>()) {
        let set = pool(per_class);
        match subsample_per_class(&set, n, seed) {
            Ok(sub) => {
                prop_assert!(n <= per_class);
                for rows in sub.rows_by_class().values() {
                    prop_assert_eq!(rows.len(), n);
                }
                let source: Vec<(u32, Vec<u32>)> = (0..set.count())
                    .map(|i| (set.labels()[i], set.row(i).iter().map(|v| v.to_bits()).collect()))
                    .collect();
                for i in 0..sub.count() {
                    let key = (sub.labels()[i], sub.row(i).iter().map(|v| v.to_bits()).collect());
                    prop_assert!(source.contains(&key));
                }
            }
            Err(e) => {
                prop_assert!(n > per_class);
                prop_assert!(e.is_validation());
            }
        }
    }
}

#[test]
fn merge_unions_generators_and_remaps_labels() {
    let a = FeatureSet::new(vec![1.0, 2.0], 1, vec![0, 1], vec!["x".into()], "bb", 0, Normalization::None).unwrap();
    let b = FeatureSet::new(vec![3.0, 4.0], 1, vec![1, 2], vec!["y".into(), "x".into()], "bb", 0, Normalization::None)
        .unwrap();
    let m = merge(&[a, b.clone()]).unwrap();
    assert_eq!(m.generator_names(), ["x", "y"]);
    assert_eq!(m.row_class_names(), ["real", "x", "y", "x"]);

    let other_layer = FeatureSet::new(vec![1.0], 1, vec![0], vec![], "bb", 3, Normalization::None).unwrap();
    assert!(merge(&[b, other_layer]).is_err());
}
