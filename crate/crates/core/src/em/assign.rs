//! Penalized path assignment by coordinate descent.
//!
//! Per item, J distinct paths are picked greedily by incremental gain
//! `N_v·(ln(sum + s) − ln sum) − α·(f(|c|+1) − f(|c|))` while path sizes
//! are kept current. The first pick (sum = 0) ranks by `N_v·ln s − α·Δf`.
//! From the second sweep on, a proposal replaces the item's previous
//! assignment only if it raises the item's share of the objective, which
//! makes every sweep non-decreasing.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng;

use super::scores::ScoreTable;
use crate::error::{DrError, Result};
use crate::retrieval::{random_distinct_paths, ItemPathMapping};
use crate::structure::{path_count, penalty_from_sizes, PathId, PenaltyKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssignOptions {
    pub alpha: f64,
    pub paths_per_item: usize,
    pub iterations: usize,
    pub penalty: PenaltyKind,
    pub k: usize,
    pub d: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignReport {
    /// Surrogate objective after each sweep.
    pub objective_per_sweep: Vec<f64>,
    /// Items with neither scores nor previous paths; assigned at random.
    pub random_fallbacks: usize,
    /// Items without scores that kept their previous paths.
    pub kept_previous: usize,
    /// Items whose candidate list was topped up to J with zero-score paths.
    pub padded_items: usize,
}

type Sizes = HashMap<PathId, usize>;

fn size_of(sizes: &Sizes, p: &PathId) -> usize {
    sizes.get(p).copied().unwrap_or(0)
}

fn grow(sizes: &mut Sizes, p: &PathId) {
    *sizes.entry(p.clone()).or_insert(0) += 1;
}

fn shrink(sizes: &mut Sizes, p: &PathId) {
    if let Some(n) = sizes.get_mut(p) {
        *n -= 1;
        if *n == 0 {
            sizes.remove(p);
        }
    }
}

/// `N_v·ln Σ s − α·Σ Δf` for an item whose own contribution is absent from `sizes`.
fn local_objective(
    paths: &[PathId],
    candidates: &[(PathId, f64)],
    n_v: f64,
    sizes: &Sizes,
    options: &AssignOptions,
) -> f64 {
    let mut sum = 0.0;
    let mut cost = 0.0;
    for p in paths {
        sum += candidates
            .iter()
            .find(|(q, _)| q == p)
            .map_or(0.0, |(_, s)| *s);
        cost += options.penalty.increment(size_of(sizes, p) as f64);
    }
    n_v * sum.ln() - options.alpha * cost
}

/// Greedy J-path selection for one item; `release` runs before the j-th
/// pick, which is where the previous sweep's j-th path is handed back.
fn greedy_pick(
    candidates: &[(PathId, f64)],
    n_v: f64,
    sizes: &mut Sizes,
    options: &AssignOptions,
    mut release: impl FnMut(usize, &mut Sizes),
) -> Vec<PathId> {
    let mut chosen: Vec<usize> = Vec::with_capacity(options.paths_per_item);
    let mut sum = 0.0;
    for j in 0..options.paths_per_item {
        release(j, sizes);
        let mut best: Option<(usize, f64, f64)> = None;
        for (idx, (path, s)) in candidates.iter().enumerate() {
            if chosen.contains(&idx) {
                continue;
            }
            let inc = options.penalty.increment(size_of(sizes, path) as f64);
            let fit = if sum > 0.0 {
                n_v * (s / sum).ln_1p()
            } else {
                n_v * s.ln()
            };
            let gain = fit - options.alpha * inc;
            let better = match best {
                None => true,
                Some((b, bg, binc)) => match gain.total_cmp(&bg) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => match inc.total_cmp(&binc) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => path < &candidates[b].0,
                    },
                },
            };
            if better {
                best = Some((idx, gain, inc));
            }
        }
        let (idx, _, _) = best.expect("candidate list holds at least J paths");
        chosen.push(idx);
        sum += candidates[idx].1;
        grow(sizes, &candidates[idx].0);
    }
    chosen
        .into_iter()
        .map(|i| candidates[i].0.clone())
        .collect()
}

/// Assign J paths per item from the score table.
///
/// Items with no recorded scores keep their `previous` paths (or random
/// ones, with a warning, when there is no previous mapping) and count
/// toward path sizes throughout.
pub fn coordinate_descent_assign<R: Rng + ?Sized>(
    table: &ScoreTable,
    options: &AssignOptions,
    previous: Option<&ItemPathMapping>,
    rng: &mut R,
) -> Result<(ItemPathMapping, AssignReport)> {
    if options.iterations == 0 {
        return Err(DrError::config(
            "coordinate descent needs at least one iteration",
        ));
    }
    if options.paths_per_item == 0
        || options.paths_per_item as u64 > path_count(options.k, options.d)
    {
        return Err(DrError::config("paths per item must be in 1..=K^D"));
    }
    if !(options.alpha >= 0.0 && options.alpha.is_finite()) {
        return Err(DrError::config("alpha must be finite and non-negative"));
    }
    if let Some(prev) = previous {
        if prev.num_items() != table.num_items() || prev.paths_per_item() != options.paths_per_item
        {
            return Err(DrError::shape(
                "previous mapping does not match the score table",
            ));
        }
    }
    let (k, d, j) = (options.k, options.d, options.paths_per_item);
    let num_items = table.num_items();
    let mut report = AssignReport::default();
    let mut sizes = Sizes::new();
    let mut assignment: Vec<Vec<PathId>> = vec![Vec::new(); num_items];
    let mut candidates: Vec<Vec<(PathId, f64)>> = vec![Vec::new(); num_items];
    let mut active = Vec::new();

    for v in 0..num_items {
        let entries = table.entries(v);
        if entries.is_empty() || table.count(v) <= 0.0 {
            let paths = match previous {
                Some(prev) => {
                    report.kept_previous += 1;
                    prev.paths_of(v).to_vec()
                }
                None => {
                    report.random_fallbacks += 1;
                    random_distinct_paths(k, d, j, &[], rng)
                }
            };
            for p in &paths {
                grow(&mut sizes, p);
            }
            assignment[v] = paths;
            continue;
        }
        let mut cands = entries.to_vec();
        if cands.len() < j {
            report.padded_items += 1;
            if let Some(prev) = previous {
                for p in prev.paths_of(v) {
                    if cands.len() < j && !cands.iter().any(|(q, _)| q == p) {
                        cands.push((p.clone(), 0.0));
                    }
                }
            }
            if cands.len() < j {
                let present: Vec<PathId> = cands.iter().map(|(p, _)| p.clone()).collect();
                let extra = random_distinct_paths(k, d, j - cands.len(), &present, rng);
                cands.extend(extra.into_iter().map(|p| (p, 0.0)));
            }
        }
        candidates[v] = cands;
        active.push(v);
    }
    if report.random_fallbacks > 0 {
        log::warn!(
            "{} items have no path scores and no previous paths; assigned at random",
            report.random_fallbacks
        );
    }

    for sweep in 0..options.iterations {
        for &v in &active {
            let n_v = table.count(v);
            let cands = &candidates[v];
            let old = std::mem::take(&mut assignment[v]);
            let proposal = greedy_pick(cands, n_v, &mut sizes, options, |jj, sizes| {
                if let Some(p) = old.get(jj) {
                    shrink(sizes, p);
                }
            });
            if sweep == 0 {
                assignment[v] = proposal;
                continue;
            }
            for p in &proposal {
                shrink(&mut sizes, p);
            }
            let new_value = local_objective(&proposal, cands, n_v, &sizes, options);
            let old_value = local_objective(&old, cands, n_v, &sizes, options);
            let kept = if new_value > old_value { proposal } else { old };
            for p in &kept {
                grow(&mut sizes, p);
            }
            assignment[v] = kept;
        }
        report
            .objective_per_sweep
            .push(objective_from_parts(table, &assignment, &sizes, options)?);
    }

    let mapping = ItemPathMapping::from_assignments(assignment, j)?;
    if mapping.path_sizes().len() != sizes.len()
        || mapping
            .path_sizes()
            .iter()
            .any(|(p, n)| size_of(&sizes, p) != *n)
    {
        return Err(DrError::Consistency(
            "online path sizes drifted from the assignment".into(),
        ));
    }
    Ok((mapping, report))
}

fn objective_from_parts(
    table: &ScoreTable,
    assignment: &[Vec<PathId>],
    sizes: &Sizes,
    options: &AssignOptions,
) -> Result<f64> {
    let mut fit = 0.0;
    for (v, paths) in assignment.iter().enumerate() {
        let n_v = table.count(v);
        if n_v > 0.0 {
            let sum: f64 = paths.iter().map(|p| table.score(v, p)).sum();
            fit += n_v * sum.ln();
        }
    }
    let penalty = penalty_from_sizes(
        sizes.values().map(|&n| n as i64),
        options.alpha,
        options.penalty,
    )?;
    Ok(fit - penalty)
}

/// `Σ_v N_v·ln Σ_j s[v, π_j(v)] − α·Σ_c f(|c|)`; items with N_v = 0 add nothing.
pub fn surrogate_objective(
    table: &ScoreTable,
    mapping: &ItemPathMapping,
    alpha: f64,
    penalty: PenaltyKind,
) -> Result<f64> {
    if mapping.num_items() != table.num_items() {
        return Err(DrError::shape("mapping does not match the score table"));
    }
    let options = AssignOptions {
        alpha,
        paths_per_item: mapping.paths_per_item(),
        iterations: 1,
        penalty,
        k: 0,
        d: 0,
    };
    let sizes: Sizes = mapping
        .path_sizes()
        .iter()
        .map(|(p, n)| (p.clone(), *n))
        .collect();
    objective_from_parts(table, mapping.assignments(), &sizes, &options)
}
