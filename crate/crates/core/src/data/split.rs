use rand::seq::SliceRandom;

use super::records::UserHistory;
use crate::error::{DrError, Result};
use crate::rng;
use crate::structure::UserContext;

/// A held-out user: the earlier half of the history is the query, the
/// later half is what retrieval should find.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalUser {
    pub user_id: u64,
    pub behavior: Vec<usize>,
    pub truth: Vec<usize>,
}

impl EvalUser {
    /// `ceil(n/2)` leading items form the behavior half.
    pub fn from_history(h: &UserHistory) -> Self {
        let cut = h.items.len().div_ceil(2);
        Self {
            user_id: h.user_id,
            behavior: h.items[..cut].to_vec(),
            truth: h.items[cut..].to_vec(),
        }
    }
}

/// Disjoint train / validation / test users.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSplit {
    pub train: Vec<UserHistory>,
    pub validation: Vec<EvalUser>,
    pub test: Vec<EvalUser>,
}

/// Draw `n_validation` and `n_test` users at random; everyone else trains.
/// Every group is listed in ascending user id.
pub fn make_split(
    histories: &[UserHistory],
    n_validation: usize,
    n_test: usize,
    seed: u64,
) -> Result<EvalSplit> {
    if n_validation + n_test > histories.len() {
        return Err(DrError::input(format!(
            "cannot hold out {} users from {}",
            n_validation + n_test,
            histories.len()
        )));
    }
    let mut order: Vec<usize> = (0..histories.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLITS));
    let mut val_idx = order[..n_validation].to_vec();
    let mut test_idx = order[n_validation..n_validation + n_test].to_vec();
    let mut train_idx = order[n_validation + n_test..].to_vec();
    for v in [&mut val_idx, &mut test_idx, &mut train_idx] {
        v.sort_unstable_by_key(|&i| histories[i].user_id);
    }
    Ok(EvalSplit {
        train: train_idx.iter().map(|&i| histories[i].clone()).collect(),
        validation: val_idx
            .iter()
            .map(|&i| EvalUser::from_history(&histories[i]))
            .collect(),
        test: test_idx
            .iter()
            .map(|&i| EvalUser::from_history(&histories[i]))
            .collect(),
    })
}

/// Next-item samples from training histories: position `t ≥ 1` of a
/// history predicts its item from the (at most `max_seq_len`) items before it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    histories: Vec<Vec<usize>>,
    positions: Vec<(u32, u32)>,
    max_seq_len: usize,
}

impl TrainingSet {
    pub fn new(histories: Vec<Vec<usize>>, max_seq_len: usize) -> Self {
        let positions = histories
            .iter()
            .enumerate()
            .flat_map(|(u, h)| (1..h.len()).map(move |t| (u as u32, t as u32)))
            .collect();
        Self {
            histories,
            positions,
            max_seq_len,
        }
    }

    pub fn from_split(split: &EvalSplit, max_seq_len: usize) -> Self {
        Self::new(
            split.train.iter().map(|h| h.items.clone()).collect(),
            max_seq_len,
        )
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sample(&self, index: usize) -> (UserContext, usize) {
        let (u, t) = self.positions[index];
        let h = &self.histories[u as usize];
        let t = t as usize;
        let start = t.saturating_sub(self.max_seq_len);
        (
            UserContext::new(h[start..t].to_vec(), self.max_seq_len),
            h[t],
        )
    }

    pub fn max_item(&self) -> Option<usize> {
        self.histories.iter().flatten().copied().max()
    }
}
