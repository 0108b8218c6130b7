//! Layer-conditional path probabilities and the multi-path structure loss.
//!
//! Layer `d` sees the user embedding concatenated with the node embeddings
//! chosen at layers `0..d`, and emits a softmax over the K nodes of layer
//! `d`. A path's log-probability is the sum of its per-layer log-probabilities.

use super::params::{user_embedding, MeanPool, StructureParams, UserContext, UserEncoder};
use super::path::PathId;
use crate::error::{DrError, Result};
use crate::math::{log_softmax_unchecked, log_sum_exp, softmax_unchecked, MlpTrace};

fn check_prefix(prefix: &[u16], params: &StructureParams) -> Result<()> {
    if prefix.len() >= params.d {
        return Err(DrError::input(format!(
            "prefix length {} must be below depth {}",
            prefix.len(),
            params.d
        )));
    }
    if let Some(&bad) = prefix.iter().find(|&&n| usize::from(n) >= params.k) {
        return Err(DrError::input(format!(
            "prefix node {bad} out of range for k = {}",
            params.k
        )));
    }
    Ok(())
}

fn check_context(ctx: &UserContext, params: &StructureParams) -> Result<()> {
    ctx.validate(params.num_items())
}

/// `[user ‖ node_emb[0][prefix[0]] ‖ … ‖ node_emb[d-1][prefix[d-1]]]`
pub(crate) fn layer_input(user: &[f64], prefix: &[u16], params: &StructureParams) -> Vec<f64> {
    let e = params.emb_dim;
    let mut x = Vec::with_capacity(e * (prefix.len() + 1));
    x.extend_from_slice(user);
    for (layer, &node) in prefix.iter().enumerate() {
        x.extend_from_slice(params.node_embeddings[layer].row(usize::from(node)));
    }
    x
}

pub(crate) fn layer_logits(user: &[f64], prefix: &[u16], params: &StructureParams) -> Vec<f64> {
    let x = layer_input(user, prefix, params);
    params.layers[prefix.len()]
        .forward(&x)
        .expect("layer input width follows from the params")
}

/// p(c_d | x, c_1..c_{d-1}) over the K nodes of layer `d = prefix.len()`.
pub fn layer_distribution(
    ctx: &UserContext,
    prefix: &[u16],
    params: &StructureParams,
) -> Result<Vec<f64>> {
    check_context(ctx, params)?;
    check_prefix(prefix, params)?;
    let user = user_embedding(ctx, params);
    Ok(softmax_unchecked(&layer_logits(&user, prefix, params)))
}

pub(crate) fn path_log_prob_from_user(
    user: &[f64],
    path: &PathId,
    params: &StructureParams,
) -> f64 {
    let nodes = path.nodes();
    (0..nodes.len())
        .map(|d| {
            let logits = layer_logits(user, &nodes[..d], params);
            log_softmax_unchecked(&logits)[usize::from(nodes[d])]
        })
        .sum()
}

/// ln p(c | x) = Σ_d ln p(c_d | x, c_1..c_{d-1}).
pub fn path_log_prob(ctx: &UserContext, path: &PathId, params: &StructureParams) -> Result<f64> {
    check_context(ctx, params)?;
    path.validate(params.k, params.d)?;
    let user = user_embedding(ctx, params);
    Ok(path_log_prob_from_user(&user, path, params))
}

/// Sorted, duplicate-free copy of `paths`.
pub fn distinct_paths(paths: &[PathId]) -> Vec<PathId> {
    let mut v = paths.to_vec();
    v.sort();
    v.dedup();
    v
}

struct LayerPass {
    trace: MlpTrace,
    log_probs: Vec<f64>,
}

/// Loss `-ln Σ_j p(c_j | user)` for an already-encoded user.
///
/// Accumulates `scale · ∂loss/∂θ` for the MLPs and node embeddings into
/// `grads` and `scale · ∂loss/∂user` into `grad_user`. Item embeddings in
/// `grads` are untouched; route `grad_user` through the encoder for those.
pub(crate) fn multi_path_loss_from_user(
    user: &[f64],
    paths: &[PathId],
    params: &StructureParams,
    scale: f64,
    grads: &mut StructureParams,
    grad_user: &mut [f64],
) -> f64 {
    let paths = distinct_paths(paths);
    if paths.is_empty() {
        return 0.0;
    }
    let e = params.emb_dim;

    let mut passes: Vec<Vec<LayerPass>> = Vec::with_capacity(paths.len());
    let mut path_log_probs = Vec::with_capacity(paths.len());
    for path in &paths {
        let nodes = path.nodes();
        let mut layers = Vec::with_capacity(nodes.len());
        let mut lp = 0.0;
        for d in 0..nodes.len() {
            let x = layer_input(user, &nodes[..d], params);
            let trace = params.layers[d].forward_traced(&x).expect("width checked");
            let log_probs = log_softmax_unchecked(trace.output());
            lp += log_probs[usize::from(nodes[d])];
            layers.push(LayerPass { trace, log_probs });
        }
        passes.push(layers);
        path_log_probs.push(lp);
    }

    let lse = log_sum_exp(&path_log_probs);
    let loss = -lse;

    for ((path, layers), &lp) in paths.iter().zip(&passes).zip(&path_log_probs) {
        // ∂(-lse)/∂lp_j = -w_j, with w_j the path's share of the total mass.
        let weight = (lp - lse).exp();
        if weight == 0.0 {
            continue;
        }
        let nodes = path.nodes();
        for (d, pass) in layers.iter().enumerate() {
            let target = usize::from(nodes[d]);
            // ∂lp/∂z = onehot - softmax(z)  ⇒  ∂loss/∂z = w (softmax(z) - onehot)
            let mut g: Vec<f64> = pass.log_probs.iter().map(|&l| weight * l.exp()).collect();
            g[target] -= weight;

            let mut grad_x = vec![0.0; e * (d + 1)];
            params.layers[d].backward(
                &pass.trace,
                &g,
                scale,
                &mut grads.layers[d],
                Some(&mut grad_x),
            );
            for (gu, gx) in grad_user.iter_mut().zip(&grad_x[..e]) {
                *gu += gx;
            }
            for (layer, &node) in nodes[..d].iter().enumerate() {
                let block = &grad_x[e * (layer + 1)..e * (layer + 2)];
                let row = grads.node_embeddings[layer].row_mut(usize::from(node));
                for (r, b) in row.iter_mut().zip(block) {
                    *r += b;
                }
            }
        }
    }
    loss
}

/// Multi-path structure loss `-ln Σ_j p(c_j | x)` with its full gradient
/// (including the item embeddings behind the user encoder). Duplicate paths
/// are collapsed before the sum.
pub fn multi_path_loss(
    ctx: &UserContext,
    paths: &[PathId],
    params: &StructureParams,
) -> Result<(f64, StructureParams)> {
    check_context(ctx, params)?;
    for p in paths {
        p.validate(params.k, params.d)?;
    }
    if paths.is_empty() {
        return Err(DrError::input("multi-path loss needs at least one path"));
    }
    let user = user_embedding(ctx, params);
    let mut grads = params.zeros_like();
    let mut grad_user = vec![0.0; params.emb_dim];
    let loss = multi_path_loss_from_user(&user, paths, params, 1.0, &mut grads, &mut grad_user);
    MeanPool.backprop(ctx, &grad_user, 1.0, &mut grads.item_embeddings);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{enumerate_paths, StructureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(k: usize, d: usize) -> StructureConfig {
        StructureConfig {
            k,
            d,
            j: 1,
            beam: 1,
            score_capacity: 1,
            emb_dim: 3,
            hidden: Some(vec![5]),
            ..Default::default()
        }
    }

    fn random(k: usize, d: usize, seed: u64) -> StructureParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StructureParams::random(&cfg(k, d), 5, &mut rng).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_layers() {
        let p = StructureParams::zeros(&cfg(4, 3), 5).unwrap();
        let ctx = UserContext::new(vec![0, 3], 69);
        for prefix in [&[][..], &[1][..], &[3, 0][..]] {
            let dist = layer_distribution(&ctx, prefix, &p).unwrap();
            assert!(dist.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn single_node_layer_is_certain() {
        let p = random(1, 3, 4);
        let ctx = UserContext::new(vec![1], 69);
        assert_eq!(layer_distribution(&ctx, &[0], &p).unwrap(), vec![1.0]);
        let path = PathId::new(&[0, 0, 0], 1).unwrap();
        assert_eq!(path_log_prob(&ctx, &path, &p).unwrap(), 0.0);
    }

    #[test]
    fn prefix_validation() {
        let p = random(3, 2, 1);
        let ctx = UserContext::default();
        assert!(layer_distribution(&ctx, &[3], &p).is_err());
        assert!(layer_distribution(&ctx, &[0, 1], &p).is_err());
        let bad_ctx = UserContext::new(vec![9], 69);
        assert!(layer_distribution(&bad_ctx, &[], &p).is_err());
    }

    #[test]
    fn uniform_layers_give_log_one_ninth() {
        let p = StructureParams::zeros(&cfg(3, 2), 5).unwrap();
        let ctx = UserContext::new(vec![2], 69);
        for path in enumerate_paths(3, 2) {
            let lp = path_log_prob(&ctx, &path, &p).unwrap();
            assert!((lp - (1.0f64 / 9.0).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn layer_distribution_matches_manual_chain() {
        use crate::math::{affine_forward, relu_in_place, softmax};
        let p = random(3, 2, 8);
        let ctx = UserContext::new(vec![0, 4], 69);
        let got = layer_distribution(&ctx, &[2], &p).unwrap();

        let mut x: Vec<f64> = (0..3)
            .map(|c| 0.5 * (p.item_embeddings.get(0, c) + p.item_embeddings.get(4, c)))
            .collect();
        x.extend_from_slice(p.node_embeddings[0].row(2));
        let mlp = p.layers[1].layers();
        let mut h = affine_forward(&mlp[0], &x).unwrap();
        relu_in_place(&mut h);
        let z = affine_forward(&mlp[1], &h).unwrap();
        let expect = softmax(&z).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn enumeration_sums_to_one() {
        let p = random(3, 2, 17);
        let ctx = UserContext::new(vec![1, 2, 3], 69);
        let total: f64 = enumerate_paths(3, 2)
            .iter()
            .map(|c| path_log_prob(&ctx, c, &p).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_path_loss_is_negative_log_prob() {
        let p = random(3, 2, 5);
        let ctx = UserContext::new(vec![3], 69);
        let path = PathId::new(&[1, 2], 3).unwrap();
        let (loss, _) = multi_path_loss(&ctx, std::slice::from_ref(&path), &p).unwrap();
        let lp = path_log_prob(&ctx, &path, &p).unwrap();
        assert!((loss + lp).abs() < 1e-14);
    }

    #[test]
    fn covering_all_paths_gives_zero_loss() {
        let p = random(3, 2, 6);
        let ctx = UserContext::new(vec![0], 69);
        let (loss, grads) = multi_path_loss(&ctx, &enumerate_paths(3, 2), &p).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grads
            .tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn duplicate_paths_collapse() {
        let p = random(3, 2, 7);
        let ctx = UserContext::new(vec![0, 1], 69);
        let a = PathId::new(&[0, 1], 3).unwrap();
        let b = PathId::new(&[2, 2], 3).unwrap();
        let (l1, _) = multi_path_loss(&ctx, &[a.clone(), b.clone()], &p).unwrap();
        let (l2, _) = multi_path_loss(&ctx, &[a.clone(), b, a], &p).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn empty_path_set_is_rejected() {
        let p = random(2, 2, 1);
        assert!(multi_path_loss(&UserContext::default(), &[], &p).is_err());
    }
}
