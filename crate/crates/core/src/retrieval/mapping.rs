use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{DrError, Result};
use crate::structure::{path_count, PathId};

/// Item → J paths, with per-path sizes and the path → items inverted index.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemPathMapping {
    paths_per_item: usize,
    assignments: Vec<Vec<PathId>>,
    path_sizes: BTreeMap<PathId, usize>,
    inverted: BTreeMap<PathId, Vec<usize>>,
}

impl ItemPathMapping {
    /// Every item must carry exactly `paths_per_item` distinct paths.
    pub fn from_assignments(assignments: Vec<Vec<PathId>>, paths_per_item: usize) -> Result<Self> {
        if paths_per_item == 0 {
            return Err(DrError::input("paths per item must be at least 1"));
        }
        let depth = assignments.iter().flatten().map(PathId::depth).next();
        for (item, paths) in assignments.iter().enumerate() {
            if paths.len() != paths_per_item {
                return Err(DrError::input(format!(
                    "item {item} has {} paths, expected {paths_per_item}",
                    paths.len()
                )));
            }
            let distinct: BTreeSet<&PathId> = paths.iter().collect();
            if distinct.len() != paths.len() {
                return Err(DrError::input(format!("item {item} has repeated paths")));
            }
            if let Some(p) = paths.iter().find(|p| Some(p.depth()) != depth) {
                return Err(DrError::input(format!(
                    "item {item}: path {p} has inconsistent depth"
                )));
            }
        }
        let inverted = build_inverted(&assignments);
        let path_sizes = inverted
            .iter()
            .map(|(p, items)| (p.clone(), items.len()))
            .collect();
        Ok(Self {
            paths_per_item,
            assignments,
            path_sizes,
            inverted,
        })
    }

    /// J distinct uniformly random paths per item.
    pub fn random<R: Rng + ?Sized>(
        num_items: usize,
        k: usize,
        d: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if j as u64 > path_count(k, d) {
            return Err(DrError::input(format!(
                "cannot draw {j} distinct paths from K^D"
            )));
        }
        let assignments = (0..num_items)
            .map(|_| random_distinct_paths(k, d, j, &[], rng))
            .collect();
        Self::from_assignments(assignments, j)
    }

    pub fn paths_per_item(&self) -> usize {
        self.paths_per_item
    }

    pub fn num_items(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<PathId>] {
        &self.assignments
    }

    pub fn paths_of(&self, item: usize) -> &[PathId] {
        &self.assignments[item]
    }

    pub fn path_sizes(&self) -> &BTreeMap<PathId, usize> {
        &self.path_sizes
    }

    pub fn path_size(&self, path: &PathId) -> usize {
        self.path_sizes.get(path).copied().unwrap_or(0)
    }

    pub fn inverted(&self) -> &BTreeMap<PathId, Vec<usize>> {
        &self.inverted
    }

    /// Items on `path`, ascending.
    pub fn items_on(&self, path: &PathId) -> &[usize] {
        self.inverted.get(path).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn top_path_size(&self) -> usize {
        self.path_sizes.values().copied().max().unwrap_or(0)
    }

    pub fn nonempty_paths(&self) -> usize {
        self.path_sizes.len()
    }

    /// `hist[b]` counts non-empty paths with size in `[2^b, 2^(b+1))`.
    pub fn size_histogram(&self) -> Vec<usize> {
        let mut hist = Vec::new();
        for &n in self.path_sizes.values() {
            let b = (usize::BITS - 1 - n.leading_zeros()) as usize;
            if hist.len() <= b {
                hist.resize(b + 1, 0);
            }
            hist[b] += 1;
        }
        hist
    }

    /// Recompute sizes and inverted index from the assignments and compare.
    pub fn check_consistency(&self) -> Result<()> {
        let rebuilt = build_inverted(&self.assignments);
        if rebuilt != self.inverted {
            return Err(DrError::Consistency(
                "inverted index disagrees with assignments".into(),
            ));
        }
        for (p, items) in &rebuilt {
            if self.path_sizes.get(p) != Some(&items.len()) {
                return Err(DrError::Consistency(format!(
                    "size counter for path {p} is stale"
                )));
            }
        }
        if self.path_sizes.len() != rebuilt.len() {
            return Err(DrError::Consistency(
                "size counters list empty paths".into(),
            ));
        }
        let total: usize = self.path_sizes.values().sum();
        if total != self.assignments.len() * self.paths_per_item {
            return Err(DrError::Consistency(format!(
                "path sizes sum to {total}, expected {}",
                self.assignments.len() * self.paths_per_item
            )));
        }
        Ok(())
    }
}

pub(crate) fn build_inverted(assignments: &[Vec<PathId>]) -> BTreeMap<PathId, Vec<usize>> {
    let mut inverted: BTreeMap<PathId, Vec<usize>> = BTreeMap::new();
    for (item, paths) in assignments.iter().enumerate() {
        for p in paths {
            inverted.entry(p.clone()).or_default().push(item);
        }
    }
    inverted
}

/// `count` distinct random paths that avoid `exclude`.
pub(crate) fn random_distinct_paths<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    count: usize,
    exclude: &[PathId],
    rng: &mut R,
) -> Vec<PathId> {
    let available = path_count(k, d).saturating_sub(exclude.len() as u64);
    let count = count.min(available.min(usize::MAX as u64) as usize);
    let mut out: Vec<PathId> = Vec::with_capacity(count);
    while out.len() < count {
        let p = PathId::random(k, d, rng);
        if !out.contains(&p) && !exclude.contains(&p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(n: &[usize]) -> PathId {
        PathId::new(n, 10).unwrap()
    }

    #[test]
    fn random_mapping_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ItemPathMapping::random(100, 4, 2, 3, &mut rng).unwrap();
        m.check_consistency().unwrap();
        assert_eq!(m.path_sizes().values().sum::<usize>(), 300);
        for item in 0..100 {
            for path in m.paths_of(item) {
                assert!(m.items_on(path).contains(&item));
            }
        }
    }

    #[test]
    fn repeated_paths_rejected() {
        let r = ItemPathMapping::from_assignments(vec![vec![p(&[1, 1]), p(&[1, 1])]], 2);
        assert!(r.is_err());
    }

    #[test]
    fn wrong_path_count_rejected() {
        let r = ItemPathMapping::from_assignments(vec![vec![p(&[1, 1])]], 2);
        assert!(r.is_err());
    }

    #[test]
    fn histogram_buckets_by_power_of_two() {
        let a = p(&[0, 0]);
        let b = p(&[0, 1]);
        let c = p(&[0, 2]);
        let mut asg = vec![vec![a.clone()]; 5];
        asg.push(vec![b]);
        asg.extend(vec![vec![c]; 2]);
        let m = ItemPathMapping::from_assignments(asg, 1).unwrap();
        assert_eq!(m.size_histogram(), vec![1, 1, 1]);
        assert_eq!(m.top_path_size(), 5);
        assert_eq!(m.nonempty_paths(), 3);
    }

    #[test]
    fn tampered_inverted_index_detected() {
        let mut m =
            ItemPathMapping::from_assignments(vec![vec![p(&[0, 0])], vec![p(&[1, 0])]], 1).unwrap();
        m.inverted.get_mut(&p(&[0, 0])).unwrap().push(1);
        assert!(matches!(
            m.check_consistency(),
            Err(DrError::Consistency(_))
        ));
    }

    #[test]
    fn random_paths_exhaust_small_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = random_distinct_paths(2, 1, 5, &[p(&[0])], &mut rng);
        assert_eq!(got, vec![p(&[1])]);
    }
}
