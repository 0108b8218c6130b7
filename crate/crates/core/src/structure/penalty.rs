use serde::{Deserialize, Serialize};

use crate::error::{DrError, Result};
use crate::retrieval::ItemPathMapping;

/// Convex increasing penalty on path size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// f(n) = n⁴/4
    #[default]
    Quartic,
    /// f(n) = n²/2
    Quadratic,
}

impl PenaltyKind {
    pub fn value(self, n: f64) -> f64 {
        match self {
            PenaltyKind::Quartic => n.powi(4) / 4.0,
            PenaltyKind::Quadratic => n * n / 2.0,
        }
    }

    /// f(n + 1) - f(n), expanded so it stays exact for integer n.
    pub fn increment(self, n: f64) -> f64 {
        match self {
            // ((n+1)⁴ - n⁴)/4 = n³ + 3n²/2 + n + 1/4
            PenaltyKind::Quartic => n * n * n + 1.5 * n * n + n + 0.25,
            PenaltyKind::Quadratic => n + 0.5,
        }
    }
}

/// α · Σ_c f(|c|) over a list of path sizes.
pub fn penalty_from_sizes<I>(sizes: I, alpha: f64, kind: PenaltyKind) -> Result<f64>
where
    I: IntoIterator<Item = i64>,
{
    let mut total = 0.0;
    for n in sizes {
        if n < 0 {
            return Err(DrError::Consistency(format!("negative path size {n}")));
        }
        total += kind.value(n as f64);
    }
    Ok(alpha * total)
}

/// α · Σ_c f(|c|) for a mapping, after checking its size counters.
pub fn penalty_value(mapping: &ItemPathMapping, alpha: f64, kind: PenaltyKind) -> Result<f64> {
    mapping.check_consistency()?;
    penalty_from_sizes(
        mapping.path_sizes().values().map(|&n| n as i64),
        alpha,
        kind,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::PathId;

    fn p(nodes: &[usize]) -> PathId {
        PathId::new(nodes, 10).unwrap()
    }

    #[test]
    fn empty_mapping_has_no_penalty() {
        let m = ItemPathMapping::from_assignments(Vec::new(), 1).unwrap();
        assert_eq!(penalty_value(&m, 1.0, PenaltyKind::Quartic).unwrap(), 0.0);
    }

    #[test]
    fn one_path_of_two_items() {
        let m =
            ItemPathMapping::from_assignments(vec![vec![p(&[1, 2])], vec![p(&[1, 2])]], 1).unwrap();
        assert_eq!(penalty_value(&m, 1.0, PenaltyKind::Quartic).unwrap(), 4.0);
    }

    #[test]
    fn sizes_three_and_one() {
        let a = p(&[0, 0]);
        let b = p(&[3, 3]);
        let m = ItemPathMapping::from_assignments(
            vec![vec![a.clone()], vec![a.clone()], vec![a], vec![b]],
            1,
        )
        .unwrap();
        assert_eq!(penalty_value(&m, 0.5, PenaltyKind::Quartic).unwrap(), 10.25);
    }

    #[test]
    fn quadratic_option() {
        assert_eq!(
            penalty_from_sizes([2, 4], 1.0, PenaltyKind::Quadratic).unwrap(),
            10.0
        );
    }

    #[test]
    fn negative_size_is_consistency_error() {
        assert!(matches!(
            penalty_from_sizes([3, -1], 1.0, PenaltyKind::Quartic),
            Err(DrError::Consistency(_))
        ));
    }

    #[test]
    fn increment_matches_difference() {
        for kind in [PenaltyKind::Quartic, PenaltyKind::Quadratic] {
            for n in 0..50 {
                let n = n as f64;
                assert_eq!(kind.increment(n), kind.value(n + 1.0) - kind.value(n));
            }
        }
    }
}
