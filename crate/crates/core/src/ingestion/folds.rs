use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{DatasetManifest, FoldPlan};
use crate::error::{Error, Result};

/// Builds `repetitions` independent k-fold partitions that never split an eye group.
///
/// Each repetition shuffles the groups with its own RNG stream, then places
/// them largest first into the fold with the fewest samples so far.
pub fn build_folds(manifest: &DatasetManifest, k: usize, repetitions: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("need k ≥ 2 folds, got {k}")));
    }
    if let Some(s) = manifest.samples.iter().find(|s| s.eye_group_id.is_empty()) {
        return Err(Error::invalid(format!("sample {} has no eye_group_id", s.sample_id)));
    }
    let groups = GroupOrder::of(manifest);
    if groups.len() < k {
        return Err(Error::invalid(format!(
            "{} eye groups cannot fill {k} folds",
            groups.len()
        )));
    }

    let mut plan = FoldPlan {
        seed,
        repetitions: Vec::with_capacity(repetitions),
    };
    for r in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);
        // stable: equal-size groups keep their shuffled order
        order.sort_by_key(|&g| std::cmp::Reverse(groups.members[g].len()));

        let mut fold_of_group = vec![0usize; groups.len()];
        let mut sizes = vec![0usize; k];
        for g in order {
            let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
            fold_of_group[g] = target;
            sizes[target] += groups.members[g].len();
        }

        let mut folds = vec![Vec::new(); k];
        for (i, s) in manifest.samples.iter().enumerate() {
            folds[fold_of_group[groups.group_of[i]]].push(s.sample_id.clone());
        }
        plan.repetitions.push(folds);
    }
    Ok(plan)
}

/// Eye groups in order of first appearance in the manifest.
struct GroupOrder {
    members: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl GroupOrder {
    fn of(manifest: &DatasetManifest) -> Self {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut group_of = Vec::with_capacity(manifest.samples.len());
        for (i, s) in manifest.samples.iter().enumerate() {
            let next = members.len();
            let g = *ids.entry(s.eye_group_id.as_str()).or_insert(next);
            if g == next {
                members.push(Vec::new());
            }
            members[g].push(i);
            group_of.push(g);
        }
        Self { members, group_of }
    }

    fn len(&self) -> usize {
        self.members.len()
    }
}
