use serde::{Deserialize, Serialize};

use super::penalty::PenaltyKind;
use crate::error::{DrError, Result};

/// Shape and regularisation of the path structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    /// Nodes per layer.
    pub k: usize,
    /// Number of layers.
    pub d: usize,
    /// Paths per item.
    pub j: usize,
    /// Beam size used at retrieval time.
    pub beam: usize,
    /// Score-table capacity per item; also the beam width used to propose
    /// candidate paths during score accumulation.
    pub score_capacity: usize,
    /// Path-size penalty factor.
    pub alpha: f64,
    /// Streaming decay for the score table.
    pub eta: f64,
    pub emb_dim: usize,
    pub max_seq_len: usize,
    /// Hidden widths of every per-layer MLP. `None` means one hidden layer of width 4K.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub penalty: PenaltyKind,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            k: 50,
            d: 3,
            j: 3,
            beam: 25,
            score_capacity: 10,
            alpha: 3e-5,
            eta: 0.999,
            emb_dim: 32,
            max_seq_len: 69,
            hidden: None,
            penalty: PenaltyKind::Quartic,
        }
    }
}

impl StructureConfig {
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![4 * self.k])
    }

    /// K^D, saturating at `u64::MAX`.
    pub fn path_count(&self) -> u64 {
        path_count(self.k, self.d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("d", self.d),
            ("j", self.j),
            ("beam", self.beam),
            ("score_capacity", self.score_capacity),
            ("emb_dim", self.emb_dim),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(DrError::config(format!("{name} must be at least 1")));
            }
        }
        if self.k > usize::from(u16::MAX) + 1 {
            return Err(DrError::config(format!("k = {} exceeds 65536", self.k)));
        }
        if self.j > self.score_capacity {
            return Err(DrError::config(format!(
                "j = {} exceeds score capacity {}",
                self.j, self.score_capacity
            )));
        }
        let paths = self.path_count();
        if self.beam as u64 > paths {
            return Err(DrError::config(format!(
                "beam {} exceeds K^D = {paths}",
                self.beam
            )));
        }
        if self.j as u64 > paths {
            return Err(DrError::config(format!(
                "j {} exceeds K^D = {paths}",
                self.j
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DrError::config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(DrError::config(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if self.hidden_widths().contains(&0) {
            return Err(DrError::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

pub fn path_count(k: usize, d: usize) -> u64 {
    let mut n: u64 = 1;
    for _ in 0..d {
        n = n.saturating_mul(k as u64);
    }
    n
}
