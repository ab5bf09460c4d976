use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use petgraph::unionfind::UnionFind;

use crate::datamodel::{read_json, Sample};
use crate::error::{Error, Result};

/// Reads an eye-group file: a JSON list of groups, each a list of sample ids.
pub fn load_eye_groups(path: &Path) -> Result<Vec<Vec<String>>> {
    read_json(path)
}

/// Assigns `eye_group_id`s from curated groups.
///
/// Overlapping groups are merged transitively. A merged group is named after
/// its lexicographically smallest member with a `g:` prefix; samples not in
/// any group keep a singleton group named after themselves.
pub fn assign_eye_groups(mut samples: Vec<Sample>, groups: &[Vec<String>]) -> Result<Vec<Sample>> {
    let position: HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sample_id.as_str(), i))
        .collect();

    let mut uf = UnionFind::<usize>::new(samples.len());
    let mut grouped = vec![false; samples.len()];
    for group in groups {
        let mut members = Vec::with_capacity(group.len());
        for id in group {
            let &i = position
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("eye-group file references unknown sample {id}")))?;
            members.push(i);
        }
        if members.len() < 2 {
            continue;
        }
        for &i in &members {
            grouped[i] = true;
        }
        for w in members.windows(2) {
            uf.union(w[0], w[1]);
        }
    }

    let mut root_name: BTreeMap<usize, &str> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if grouped[i] {
            let name = root_name.entry(uf.find(i)).or_insert(s.sample_id.as_str());
            if s.sample_id.as_str() < *name {
                *name = s.sample_id.as_str();
            }
        }
    }
    let names: Vec<String> = (0..samples.len())
        .map(|i| {
            if grouped[i] {
                format!("g:{}", root_name[&uf.find(i)])
            } else {
                samples[i].sample_id.clone()
            }
        })
        .collect();
    for (s, name) in samples.iter_mut().zip(names) {
        s.eye_group_id = name;
    }
    Ok(samples)
}
