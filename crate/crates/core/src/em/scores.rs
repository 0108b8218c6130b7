use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{DrError, Result};
use crate::retrieval::PathScorer;
use crate::structure::{user_embedding, PathId, StructureParams, UserContext};

/// Per-item top-S path scores and decayed occurrence counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    capacity: usize,
    entries: Vec<Vec<(PathId, f64)>>,
    counts: Vec<f64>,
}

fn by_score_then_path(a: &(PathId, f64), b: &(PathId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl ScoreTable {
    pub fn new(num_items: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(DrError::config("score capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: vec![Vec::new(); num_items],
            counts: vec![0.0; num_items],
        })
    }

    /// Build from explicit per-item lists; each list is sorted and truncated.
    pub fn from_entries(
        capacity: usize,
        entries: Vec<Vec<(PathId, f64)>>,
        counts: Vec<f64>,
    ) -> Result<Self> {
        if entries.len() != counts.len() {
            return Err(DrError::shape("entries and counts differ in length"));
        }
        let mut table = Self::new(entries.len(), capacity)?;
        for (v, mut list) in entries.into_iter().enumerate() {
            check_scores(&list)?;
            list.sort_by(by_score_then_path);
            list.truncate(capacity);
            table.entries[v] = list;
        }
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(DrError::input(format!("invalid occurrence count {c}")));
        }
        table.counts = counts;
        Ok(table)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_items(&self) -> usize {
        self.entries.len()
    }

    /// Recorded (path, score) pairs for `item`, best first.
    pub fn entries(&self, item: usize) -> &[(PathId, f64)] {
        &self.entries[item]
    }

    pub fn count(&self, item: usize) -> f64 {
        self.counts[item]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// s[v, c], zero when untracked.
    pub fn score(&self, item: usize, path: &PathId) -> f64 {
        self.entries[item]
            .iter()
            .find(|(p, _)| p == path)
            .map_or(0.0, |(_, s)| *s)
    }

    /// N_v ← η·N_v + 1.
    pub fn observe(&mut self, item: usize, eta: f64) {
        self.counts[item] = eta * self.counts[item] + 1.0;
    }

    /// Fold a fresh score list into the record for `item`.
    ///
    /// Paths in both lists get `η·old + new`, paths only in the fresh list
    /// get `η·min + new`, paths only in the record get `η·old`; the best S
    /// survive. `min` is the smallest recorded score once the record is
    /// full and zero before that.
    pub fn update(&mut self, item: usize, new_scores: &[(PathId, f64)], eta: f64) -> Result<()> {
        if item >= self.entries.len() {
            return Err(DrError::input(format!("item {item} out of range")));
        }
        check_scores(new_scores)?;
        let recorded = &self.entries[item];
        let min_score = if recorded.len() < self.capacity {
            0.0
        } else {
            recorded
                .iter()
                .map(|(_, s)| *s)
                .fold(f64::INFINITY, f64::min)
        };
        let fresh: HashMap<&PathId, f64> = new_scores.iter().map(|(p, s)| (p, *s)).collect();
        let mut merged: Vec<(PathId, f64)> = recorded
            .iter()
            .map(|(p, old)| (p.clone(), eta * old + fresh.get(p).copied().unwrap_or(0.0)))
            .collect();
        for (p, s) in new_scores {
            if !recorded.iter().any(|(q, _)| q == p) {
                merged.push((p.clone(), eta * min_score + s));
            }
        }
        merged.sort_by(by_score_then_path);
        merged.truncate(self.capacity);
        self.entries[item] = merged;
        Ok(())
    }
}

fn check_scores(scores: &[(PathId, f64)]) -> Result<()> {
    for (i, (p, s)) in scores.iter().enumerate() {
        if !(s.is_finite() && *s >= 0.0) {
            return Err(DrError::input(format!(
                "score for path {p} must be finite and non-negative, got {s}"
            )));
        }
        if scores[..i].iter().any(|(q, _)| q == p) {
            return Err(DrError::input(format!("path {p} listed twice")));
        }
    }
    Ok(())
}

/// See [`ScoreTable::update`].
pub fn streaming_score_update(
    table: &mut ScoreTable,
    item: usize,
    new_scores: &[(PathId, f64)],
    eta: f64,
) -> Result<()> {
    table.update(item, new_scores, eta)
}

/// For each `(context, item)` sample, score the top `beam` paths under
/// `params` by probability, fold them into the item's record and bump N_v.
pub fn accumulate_scores(
    batch: &[(UserContext, usize)],
    params: &StructureParams,
    table: &mut ScoreTable,
    beam: usize,
    eta: f64,
) -> Result<()> {
    let scorer = PathScorer::new(params);
    accumulate_with_scorer(batch, &scorer, table, beam, eta)
}

pub(crate) fn accumulate_with_scorer(
    batch: &[(UserContext, usize)],
    scorer: &PathScorer<'_>,
    table: &mut ScoreTable,
    beam: usize,
    eta: f64,
) -> Result<()> {
    let params = scorer.params();
    if beam == 0 {
        return Err(DrError::input("beam size must be at least 1"));
    }
    if table.num_items() != params.num_items() {
        return Err(DrError::shape(
            "score table and model disagree on item count",
        ));
    }
    for (ctx, item) in batch {
        ctx.validate(params.num_items())?;
        if *item >= params.num_items() {
            return Err(DrError::input(format!("target item {item} out of range")));
        }
        let user = user_embedding(ctx, params);
        let scored: Vec<(PathId, f64)> = scorer
            .beam_search_user(&user, beam)
            .into_iter()
            .map(|(p, lp)| (p, lp.exp()))
            .collect();
        table.update(*item, &scored, eta)?;
        table.observe(*item, eta);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{enumerate_paths, path_log_prob, StructureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> PathId {
        s.parse().unwrap()
    }

    #[test]
    fn empty_record_takes_new_scores() {
        let mut t = ScoreTable::new(1, 3).unwrap();
        t.update(0, &[(p("0-1"), 2.0)], 0.9).unwrap();
        assert_eq!(t.entries(0), &[(p("0-1"), 2.0)]);
    }

    #[test]
    fn four_case_rule_under_eviction() {
        let (a, b, c) = (p("0-0"), p("0-1"), p("0-2"));
        let mut t =
            ScoreTable::from_entries(2, vec![vec![(a.clone(), 5.0), (b, 3.0)]], vec![1.0]).unwrap();
        t.update(0, &[(a.clone(), 2.0), (c.clone(), 4.0)], 0.5)
            .unwrap();
        assert_eq!(t.entries(0), &[(c, 5.5), (a, 4.5)]);
    }

    #[test]
    fn undecayed_unfilled_record_is_exact_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let paths = enumerate_paths(3, 2);
        let mut t = ScoreTable::new(1, 9).unwrap();
        let mut oracle = vec![0.0; 9];
        for _ in 0..30 {
            let mut fresh = Vec::new();
            for (i, path) in paths.iter().enumerate() {
                if rand::Rng::random_bool(&mut rng, 0.4) {
                    let s: f64 = rand::Rng::random(&mut rng);
                    oracle[i] += s;
                    fresh.push((path.clone(), s));
                }
            }
            t.update(0, &fresh, 1.0).unwrap();
        }
        for (i, path) in paths.iter().enumerate() {
            assert!((t.score(0, path) - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_or_duplicate_scores_rejected() {
        let mut t = ScoreTable::new(1, 2).unwrap();
        assert!(t.update(0, &[(p("0"), -1.0)], 1.0).is_err());
        assert!(t.update(0, &[(p("0"), 1.0), (p("0"), 1.0)], 1.0).is_err());
        assert!(t.entries(0).is_empty());
    }

    #[test]
    fn counts_decay() {
        let mut t = ScoreTable::new(1, 1).unwrap();
        t.observe(0, 0.5);
        t.observe(0, 0.5);
        assert_eq!(t.count(0), 1.5);
    }

    fn tiny(seed: u64) -> StructureParams {
        let cfg = StructureConfig {
            k: 2,
            d: 2,
            j: 1,
            beam: 4,
            score_capacity: 4,
            emb_dim: 3,
            hidden: Some(vec![4]),
            ..Default::default()
        };
        StructureParams::random(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn full_beam_accumulates_exact_path_probabilities() {
        let params = tiny(8);
        let batch = vec![
            (UserContext::new(vec![0], 69), 1),
            (UserContext::new(vec![2, 0], 69), 1),
            (UserContext::new(vec![], 69), 2),
        ];
        let mut t = ScoreTable::new(3, 4).unwrap();
        accumulate_scores(&batch, &params, &mut t, 4, 1.0).unwrap();
        assert_eq!(t.count(1), 2.0);
        assert_eq!(t.count(2), 1.0);
        assert_eq!(t.count(0), 0.0);
        for path in enumerate_paths(2, 2) {
            let expect: f64 = batch
                .iter()
                .filter(|(_, v)| *v == 1)
                .map(|(ctx, _)| path_log_prob(ctx, &path, &params).unwrap().exp())
                .sum();
            assert!((t.score(1, &path) - expect).abs() < 1e-12);
        }
        let total: f64 = t.entries(2).iter().map(|(_, s)| s).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_path_beam_records_its_probability() {
        let params = tiny(1);
        let ctx = UserContext::new(vec![1], 69);
        let mut t = ScoreTable::new(3, 4).unwrap();
        accumulate_scores(&[(ctx.clone(), 0)], &params, &mut t, 1, 0.999).unwrap();
        let (path, s) = &t.entries(0)[0];
        assert_eq!(t.entries(0).len(), 1);
        assert!((s - path_log_prob(&ctx, path, &params).unwrap().exp()).abs() < 1e-15);
        assert_eq!(t.count(0), 1.0);
    }
}
