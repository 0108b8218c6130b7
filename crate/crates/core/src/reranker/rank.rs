use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::softmax::SoftmaxModel;
use crate::error::{DrError, Result};
use crate::math::dot;
use crate::structure::{user_embedding, StructureParams, UserContext};

/// An item with its reranker score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub item: usize,
    pub score: f64,
}

/// Top-k of a reranked candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct Reranked {
    pub items: Vec<Ranked>,
    /// Set when fewer than `k` candidates were available.
    pub short: bool,
}

fn by_score_then_item(a: &Ranked, b: &Ranked) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// Best `k` entries, highest score first, ties to the smaller item id.
pub(crate) fn top_k(mut scored: Vec<Ranked>, k: usize) -> Vec<Ranked> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score_then_item);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score_then_item);
    scored
}

/// Heap entry ordered so the worst of the kept items sits on top.
struct Worst(Ranked);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        by_score_then_item(&self.0, &other.0)
    }
}

/// Score every item and keep the best `k` in a bounded heap.
pub(crate) fn brute_force_user(user: &[f64], model: &SoftmaxModel, k: usize) -> Vec<Ranked> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for (item, emb) in model
        .output_embeddings
        .values()
        .chunks_exact(model.emb_dim())
        .enumerate()
    {
        let entry = Ranked {
            item,
            score: dot(user, emb),
        };
        if heap.len() < k {
            heap.push(Worst(entry));
        } else if let Some(mut top) = heap.peek_mut() {
            if by_score_then_item(&entry, &top.0) == Ordering::Less {
                *top = Worst(entry);
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|w| w.0).collect()
}

pub(crate) fn rerank_user(
    user: &[f64],
    candidates: &[usize],
    model: &SoftmaxModel,
    k: usize,
) -> Reranked {
    let mut unique = candidates.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let short = unique.len() < k;
    let scored = unique
        .into_iter()
        .map(|item| Ranked {
            item,
            score: model.score(user, item),
        })
        .collect();
    Reranked {
        items: top_k(scored, k),
        short,
    }
}

/// Exact top-k items by inner product with the encoded user.
pub fn brute_force_retrieve(
    ctx: &UserContext,
    model: &SoftmaxModel,
    params: &StructureParams,
    k: usize,
) -> Result<Vec<Ranked>> {
    model.check_encoder(params)?;
    if k == 0 || k > model.num_items() {
        return Err(DrError::input(format!(
            "k must be in 1..={}, got {k}",
            model.num_items()
        )));
    }
    ctx.validate(params.num_items())?;
    Ok(brute_force_user(&user_embedding(ctx, params), model, k))
}

/// Order `candidates` by reranker score and keep the best `k`.
pub fn rerank(
    candidates: &[usize],
    ctx: &UserContext,
    model: &SoftmaxModel,
    params: &StructureParams,
    k: usize,
) -> Result<Reranked> {
    model.check_encoder(params)?;
    if candidates.is_empty() {
        return Err(DrError::input("no candidates to rerank"));
    }
    if let Some(bad) = candidates.iter().find(|&&c| c >= model.num_items()) {
        return Err(DrError::input(format!("candidate {bad} out of range")));
    }
    ctx.validate(params.num_items())?;
    Ok(rerank_user(
        &user_embedding(ctx, params),
        candidates,
        model,
        k,
    ))
}
