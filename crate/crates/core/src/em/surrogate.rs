use std::collections::BTreeMap;

use crate::error::{DrError, Result};
use crate::retrieval::ItemPathMapping;
use crate::structure::{path_log_prob, StructureParams, UserContext};

/// Exact structure log-likelihood next to two upper bounds on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    /// Σ_i ln q_i with q_i = Σ_j p(π_j(y_i) | x_i).
    pub exact: f64,
    /// Σ_v (N_v·ln Σ_{i:y_i=v} q_i − ln N_v), the form the M-step maximizes.
    pub surrogate: f64,
    /// Σ_v N_v·(ln Σ_{i:y_i=v} q_i − ln N_v), the Jensen bound; never above `surrogate`.
    pub jensen: f64,
}

/// Bounds from per-item lists of per-sample path mass q_i.
pub fn bound_terms(masses_by_item: &[Vec<f64>]) -> BoundCheck {
    let mut out = BoundCheck {
        exact: 0.0,
        surrogate: 0.0,
        jensen: 0.0,
    };
    for masses in masses_by_item.iter().filter(|m| !m.is_empty()) {
        let n = masses.len() as f64;
        let total: f64 = masses.iter().sum();
        out.exact += masses.iter().map(|q| q.ln()).sum::<f64>();
        out.surrogate += n * total.ln() - n.ln();
        out.jensen += n * (total.ln() - n.ln());
    }
    out
}

/// Evaluate [`BoundCheck`] for `(context, item)` samples under `params`
/// and `mapping`, with exact path probabilities.
pub fn structure_bound_check(
    samples: &[(UserContext, usize)],
    params: &StructureParams,
    mapping: &ItemPathMapping,
) -> Result<BoundCheck> {
    let mut grouped: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (ctx, item) in samples {
        if *item >= mapping.num_items() {
            return Err(DrError::input(format!("item {item} has no paths")));
        }
        let mut q = 0.0;
        for path in mapping.paths_of(*item) {
            q += path_log_prob(ctx, path, params)?.exp();
        }
        grouped.entry(*item).or_default().push(q);
    }
    let lists: Vec<Vec<f64>> = grouped.into_values().collect();
    Ok(bound_terms(&lists))
}
