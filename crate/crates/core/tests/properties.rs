use std::collections::{HashMap, HashSet};

use amddx_core::datamodel::{validate_structure, DatasetManifest, Sample};
use amddx_core::ingestion::build_folds;
use proptest::prelude::*;

fn arb_sample(i: usize) -> impl Strategy<Value = Sample> {
    (
        prop::option::of(0u8..2),
        prop::option::of(prop::collection::vec(0u8..2, 5)),
        0usize..4,
    )
        .prop_map(move |(diagnosis, lesions, g)| Sample {
            sample_id: format!("img_{i}"),
            image_ref: format!("dir/img_{i}.jpg"),
            diagnosis,
            lesions,
            eye_group_id: format!("eye_{}", i / (g + 1)),
        })
}

fn arb_manifest(max: usize) -> impl Strategy<Value = DatasetManifest> {
    (1..max).prop_flat_map(|n| {
        (0..n)
            .map(arb_sample)
            .collect::<Vec<_>>()
            .prop_map(|samples| DatasetManifest::new("prop", samples))
    })
}

proptest! {
    #[test]
    fn manifest_json_round_trip(m in arb_manifest(30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        prop_assert_eq!(&back.samples, &m.samples);
        prop_assert_eq!(&back.name, &m.name);
        prop_assert!(validate_structure(&back).is_empty());
    }

    #[test]
    fn folds_respect_groups_and_partition(m in arb_manifest(40), k in 2usize..4, reps in 1usize..4, seed in any::<u64>()) {
        let groups: HashSet<&str> = m.samples.iter().map(|s| s.eye_group_id.as_str()).collect();
        prop_assume!(groups.len() >= k);
        let plan = build_folds(&m, k, reps, seed).unwrap();
        prop_assert_eq!(plan.runs(), k * reps);
        prop_assert!(plan.violations(&m).is_empty());
        let group_of: HashMap<&str, &str> = m.samples.iter().map(|s| (s.sample_id.as_str(), s.eye_group_id.as_str())).collect();
        for rep in &plan.repetitions {
            let mut seen = HashSet::new();
            let mut fold_of_group: HashMap<&str, usize> = HashMap::new();
            for (f, fold) in rep.iter().enumerate() {
                prop_assert!(!fold.is_empty());
                for id in fold {
                    prop_assert!(seen.insert(id.as_str()));
                    let g = group_of[id.as_str()];
                    prop_assert_eq!(*fold_of_group.entry(g).or_insert(f), f);
                }
            }
            prop_assert_eq!(seen.len(), m.samples.len());
        }
    }
}
