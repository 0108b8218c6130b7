use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::split::EvalUser;
use crate::error::{DrError, Result};

/// Precision, recall and F-measure at k, averaged over users with equal weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub users: usize,
    /// Users left out because their truth half was empty.
    pub skipped_users: usize,
}

/// `(P, R, F)` for one user; only the first `k` distinct retrieved items count.
pub fn user_metrics(retrieved: &[usize], truth: &[usize], k: usize) -> (f64, f64, f64) {
    let truth: HashSet<usize> = truth.iter().copied().collect();
    let mut seen = HashSet::new();
    let hits = retrieved
        .iter()
        .filter(|i| seen.insert(**i))
        .take(k)
        .filter(|i| truth.contains(i))
        .count() as f64;
    let p = hits / k as f64;
    let r = if truth.is_empty() {
        0.0
    } else {
        hits / truth.len() as f64
    };
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

/// Sum in sorted order so the average does not depend on user order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Run `retrieve` on every user's behavior half and score against the truth half.
pub fn evaluate<F>(users: &[EvalUser], k: usize, mut retrieve: F) -> Result<MetricReport>
where
    F: FnMut(&EvalUser) -> Result<Vec<usize>>,
{
    if k == 0 {
        return Err(DrError::input("k must be at least 1"));
    }
    let mut ps = Vec::with_capacity(users.len());
    let mut rs = Vec::with_capacity(users.len());
    let mut fs = Vec::with_capacity(users.len());
    let mut skipped = 0;
    for u in users {
        if u.truth.is_empty() {
            skipped += 1;
            continue;
        }
        let got = retrieve(u)?;
        let (p, r, f) = user_metrics(&got, &u.truth, k);
        ps.push(p);
        rs.push(r);
        fs.push(f);
    }
    if skipped > 0 {
        log::info!("{skipped} users without ground truth left out of evaluation");
    }
    Ok(MetricReport {
        k,
        users: ps.len(),
        precision: stable_mean(ps),
        recall: stable_mean(rs),
        f_measure: stable_mean(fs),
        skipped_users: skipped,
    })
}
