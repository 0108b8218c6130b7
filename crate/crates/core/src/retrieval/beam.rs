//! Layer-wise beam search over the path structure.
//!
//! At each layer every surviving prefix is expanded to its K successors and
//! the best B of the (≤ K·B) candidates survive; cost O(D·K·B log B) beyond
//! the network evaluations. Ties on log-probability go to the
//! lexicographically smaller path.

use std::cmp::Ordering;

use smallvec::SmallVec;

use crate::error::{DrError, Result};
use crate::math::{dot, log_softmax_unchecked, DenseMatrix};
use crate::structure::{user_embedding, PathId, StructureParams, UserContext};

/// A surviving prefix and its accumulated log-probability (always ≤ 0).
#[derive(Clone, Debug, PartialEq)]
pub struct BeamEntry {
    pub prefix: SmallVec<[u16; 4]>,
    pub log_prob: f64,
}

/// Inference view over a parameter snapshot.
///
/// The first affine map of layer `d` acts on `[user ‖ e_0 ‖ … ‖ e_{d-1}]`,
/// so it splits into a user block and one block per earlier layer. The
/// per-node products of the earlier-layer blocks are tabulated once here;
/// a query then only pays for the user block and the rest of each MLP.
pub struct PathScorer<'a> {
    params: &'a StructureParams,
    /// `node_proj[d][l]` is K × h: row `c` is `W_d[:, block l+1] · node_emb[l][c]`.
    node_proj: Vec<Vec<DenseMatrix>>,
}

/// Per-query cache: `bias_d + W_d[:, user block] · user` for every layer.
pub struct QueryState {
    base: Vec<Vec<f64>>,
}

impl<'a> PathScorer<'a> {
    pub fn new(params: &'a StructureParams) -> Self {
        let e = params.emb_dim;
        let node_proj = (0..params.d)
            .map(|d| {
                let first = &params.layers[d].layers()[0];
                let h = first.output_dim();
                (0..d)
                    .map(|l| {
                        let off = e * (l + 1);
                        let nodes = &params.node_embeddings[l];
                        let mut proj = DenseMatrix::zeros(params.k, h);
                        for c in 0..params.k {
                            let emb = nodes.row(c);
                            let out = proj.row_mut(c);
                            for (r, o) in out.iter_mut().enumerate() {
                                *o = dot(&first.weight.row(r)[off..off + e], emb);
                            }
                        }
                        proj
                    })
                    .collect()
            })
            .collect();
        Self { params, node_proj }
    }

    pub fn params(&self) -> &StructureParams {
        self.params
    }

    pub fn query(&self, user: &[f64]) -> QueryState {
        let e = self.params.emb_dim;
        let base = self
            .params
            .layers
            .iter()
            .map(|mlp| {
                let first = &mlp.layers()[0];
                (0..first.output_dim())
                    .map(|r| first.bias[r] + dot(&first.weight.row(r)[..e], user))
                    .collect()
            })
            .collect();
        QueryState { base }
    }

    fn first_preactivation(&self, query: &QueryState, prefix: &[u16]) -> Vec<f64> {
        let d = prefix.len();
        let mut pre = query.base[d].clone();
        for (l, &node) in prefix.iter().enumerate() {
            let row = self.node_proj[d][l].row(usize::from(node));
            for (p, r) in pre.iter_mut().zip(row) {
                *p += r;
            }
        }
        pre
    }

    /// ln p(· | user, prefix) over the K nodes of layer `prefix.len()`.
    pub fn layer_log_probs(&self, query: &QueryState, prefix: &[u16]) -> Vec<f64> {
        let pre = self.first_preactivation(query, prefix);
        let logits = self.params.layers[prefix.len()].forward_from_first(pre);
        log_softmax_unchecked(&logits)
    }

    /// [`PathScorer::layer_log_probs`] for several prefixes of equal length.
    fn layer_log_probs_batch(&self, query: &QueryState, prefixes: &[BeamEntry]) -> Vec<Vec<f64>> {
        let Some(first) = prefixes.first() else {
            return Vec::new();
        };
        let pre = prefixes
            .iter()
            .map(|b| self.first_preactivation(query, &b.prefix))
            .collect();
        self.params.layers[first.prefix.len()]
            .forward_batch_from_first(pre)
            .iter()
            .map(|logits| log_softmax_unchecked(logits))
            .collect()
    }

    /// Top `beam` paths for an encoded user, best first.
    pub fn beam_search_user(&self, user: &[f64], beam: usize) -> Vec<(PathId, f64)> {
        let query = self.query(user);
        let beam = beam.max(1);
        let k = self.params.k;
        let mut beams = vec![BeamEntry {
            prefix: SmallVec::new(),
            log_prob: 0.0,
        }];
        for _ in 0..self.params.d {
            let mut cands: Vec<(f64, u32, u16)> = Vec::with_capacity(beams.len() * k);
            for (bi, (b, lp)) in beams
                .iter()
                .zip(self.layer_log_probs_batch(&query, &beams))
                .enumerate()
            {
                for (node, l) in lp.into_iter().enumerate() {
                    cands.push((b.log_prob + l, bi as u32, node as u16));
                }
            }
            let cmp = |a: &(f64, u32, u16), b: &(f64, u32, u16)| -> Ordering {
                b.0.total_cmp(&a.0)
                    .then_with(|| beams[a.1 as usize].prefix.cmp(&beams[b.1 as usize].prefix))
                    .then(a.2.cmp(&b.2))
            };
            let keep = beam.min(cands.len());
            if cands.len() > keep {
                cands.select_nth_unstable_by(keep - 1, cmp);
                cands.truncate(keep);
            }
            cands.sort_unstable_by(cmp);
            beams = cands
                .into_iter()
                .map(|(log_prob, parent, node)| {
                    let mut prefix = beams[parent as usize].prefix.clone();
                    prefix.push(node);
                    BeamEntry { prefix, log_prob }
                })
                .collect();
        }
        beams
            .into_iter()
            .map(|b| (PathId::from_nodes(&b.prefix), b.log_prob))
            .collect()
    }
}

/// Up to `beam` most probable paths for `ctx`, sorted by descending
/// log-probability.
pub fn beam_search(
    ctx: &UserContext,
    params: &StructureParams,
    beam: usize,
) -> Result<Vec<(PathId, f64)>> {
    if beam == 0 {
        return Err(DrError::input("beam size must be at least 1"));
    }
    ctx.validate(params.num_items())?;
    let user = user_embedding(ctx, params);
    Ok(PathScorer::new(params).beam_search_user(&user, beam))
}
