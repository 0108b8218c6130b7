use std::fmt;
use std::str::FromStr;

use rand::Rng;
use smallvec::SmallVec;

use crate::error::{DrError, Result};

/// One path through the structure: a node index per layer. Ordering is
/// lexicographic over the node sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId {
    nodes: SmallVec<[u16; 4]>,
}

impl PathId {
    pub fn new(nodes: &[usize], k: usize) -> Result<Self> {
        if let Some(&bad) = nodes.iter().find(|&&n| n >= k) {
            return Err(DrError::input(format!(
                "node {bad} out of range for k = {k}"
            )));
        }
        Ok(Self {
            nodes: nodes.iter().map(|&n| n as u16).collect(),
        })
    }

    pub(crate) fn from_nodes(nodes: &[u16]) -> Self {
        Self {
            nodes: SmallVec::from_slice(nodes),
        }
    }

    pub fn nodes(&self) -> &[u16] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self, k: usize, d: usize) -> Result<()> {
        if self.nodes.len() != d {
            return Err(DrError::input(format!(
                "path {self} has length {}, expected {d}",
                self.nodes.len()
            )));
        }
        if let Some(&bad) = self.nodes.iter().find(|&&n| usize::from(n) >= k) {
            return Err(DrError::input(format!(
                "path {self}: node {bad} out of range for k = {k}"
            )));
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Self {
        Self {
            nodes: (0..d).map(|_| rng.random_range(0..k) as u16).collect(),
        }
    }

    /// Mixed-radix code; preserves the lexicographic order.
    pub fn code(&self, k: usize) -> u64 {
        self.nodes
            .iter()
            .fold(0u64, |acc, &n| acc * k as u64 + u64::from(n))
    }

    pub fn from_code(mut code: u64, k: usize, d: usize) -> Self {
        let mut nodes: SmallVec<[u16; 4]> = SmallVec::from_elem(0, d);
        for slot in nodes.iter_mut().rev() {
            *slot = (code % k as u64) as u16;
            code /= k as u64;
        }
        Self { nodes }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

impl FromStr for PathId {
    type Err = DrError;

    fn from_str(s: &str) -> Result<Self> {
        let nodes = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<u16>()
                    .map_err(|e| DrError::Parse(format!("bad path node {t:?} in {s:?}: {e}")))
            })
            .collect::<Result<SmallVec<[u16; 4]>>>()?;
        Ok(Self { nodes })
    }
}

/// All K^D paths in lexicographic order.
pub fn enumerate_paths(k: usize, d: usize) -> Vec<PathId> {
    let total = super::config::path_count(k, d);
    (0..total).map(|c| PathId::from_code(c, k, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_round_trip() {
        let p = PathId::new(&[3, 1, 7], 8).unwrap();
        assert_eq!(p.to_string(), "3-1-7");
        assert_eq!("3-1-7".parse::<PathId>().unwrap(), p);
        assert!("3-x".parse::<PathId>().is_err());
    }

    #[test]
    fn node_out_of_range_rejected() {
        assert!(PathId::new(&[0, 3], 3).is_err());
        let p = PathId::new(&[0, 2], 3).unwrap();
        assert!(p.validate(3, 2).is_ok());
        assert!(p.validate(2, 2).is_err());
        assert!(p.validate(3, 3).is_err());
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete() {
        let all = enumerate_paths(3, 2);
        assert_eq!(all.len(), 9);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        for (i, p) in all.iter().enumerate() {
            assert_eq!(p.code(3), i as u64);
        }
    }
}
