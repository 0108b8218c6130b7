use std::collections::HashSet;

use super::beam::PathScorer;
use super::mapping::ItemPathMapping;
use crate::error::{DrError, Result};
use crate::structure::{user_embedding, PathId, StructureParams, UserContext};

/// A retrieved item with the log-probability of its best beam path.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub item: usize,
    pub log_prob: f64,
}

/// Outcome of [`adaptive_beam`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveBeam {
    pub beam: usize,
    pub candidates: Vec<Candidate>,
    /// Whether the candidate count landed inside the requested multiplier range.
    pub in_range: bool,
}

/// Union of the items on `paths`, each scored by its best path; sorted by
/// descending log-probability, then item index.
pub fn candidates_from_paths(paths: &[(PathId, f64)], mapping: &ItemPathMapping) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut sorted: Vec<&(PathId, f64)> = paths.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (path, lp) in sorted {
        for &item in mapping.items_on(path) {
            if seen.insert(item) {
                out.push(Candidate {
                    item,
                    log_prob: *lp,
                });
            }
        }
    }
    out.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then(a.item.cmp(&b.item)));
    out
}

impl PathScorer<'_> {
    pub fn retrieve_user(
        &self,
        user: &[f64],
        mapping: &ItemPathMapping,
        beam: usize,
    ) -> Vec<Candidate> {
        candidates_from_paths(&self.beam_search_user(user, beam), mapping)
    }

    /// Smallest beam whose candidate set reaches `min_multiplier · target`
    /// items: double until it does (or the beam covers every path), then
    /// binary-search between the last failure and the first success.
    pub fn adaptive_user(
        &self,
        user: &[f64],
        mapping: &ItemPathMapping,
        target: usize,
        multipliers: (f64, f64),
    ) -> AdaptiveBeam {
        let need = (multipliers.0 * target as f64).ceil() as usize;
        let max_beam = self
            .params()
            .k
            .checked_pow(self.params().d as u32)
            .unwrap_or(usize::MAX);
        let mut lo = 0usize;
        let mut hi = 1usize;
        let mut best = self.retrieve_user(user, mapping, hi);
        while best.len() < need && hi < max_beam {
            lo = hi;
            hi = hi.saturating_mul(2).min(max_beam);
            best = self.retrieve_user(user, mapping, hi);
        }
        if best.len() >= need {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                let got = self.retrieve_user(user, mapping, mid);
                if got.len() >= need {
                    hi = mid;
                    best = got;
                } else {
                    lo = mid;
                }
            }
        }
        let upper = (multipliers.1 * target as f64).floor() as usize;
        let in_range = best.len() >= need && best.len() <= upper;
        AdaptiveBeam {
            beam: hi,
            candidates: best,
            in_range,
        }
    }
}

/// Items on the top `beam` paths for `ctx`.
pub fn retrieve_candidates(
    ctx: &UserContext,
    params: &StructureParams,
    mapping: &ItemPathMapping,
    beam: usize,
) -> Result<Vec<Candidate>> {
    check_mapping(params, mapping)?;
    if beam == 0 {
        return Err(DrError::input("beam size must be at least 1"));
    }
    ctx.validate(params.num_items())?;
    let user = user_embedding(ctx, params);
    Ok(PathScorer::new(params).retrieve_user(&user, mapping, beam))
}

/// Beam sized so the candidate count falls in `[lo·target, hi·target]`
/// where achievable; see [`PathScorer::adaptive_user`].
pub fn adaptive_beam(
    ctx: &UserContext,
    params: &StructureParams,
    mapping: &ItemPathMapping,
    target: usize,
    multipliers: (f64, f64),
) -> Result<AdaptiveBeam> {
    check_mapping(params, mapping)?;
    if target == 0 {
        return Err(DrError::input("target candidate count must be at least 1"));
    }
    if !(multipliers.0 > 0.0 && multipliers.0 <= multipliers.1) {
        return Err(DrError::input("multiplier range must satisfy 0 < lo <= hi"));
    }
    ctx.validate(params.num_items())?;
    let user = user_embedding(ctx, params);
    Ok(PathScorer::new(params).adaptive_user(&user, mapping, target, multipliers))
}

fn check_mapping(params: &StructureParams, mapping: &ItemPathMapping) -> Result<()> {
    if mapping.num_items() != params.num_items() {
        return Err(DrError::shape(format!(
            "mapping covers {} items, model has {}",
            mapping.num_items(),
            params.num_items()
        )));
    }
    Ok(())
}
