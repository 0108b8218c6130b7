use rand::seq::index;
use rand::Rng;

use crate::error::{DrError, Result};
use crate::math::{dot, log_softmax_unchecked, softmax_unchecked, DenseMatrix};
use crate::structure::{user_embedding, MeanPool, StructureParams, UserContext, UserEncoder};

/// Dot-product softmax over all V items; the user side comes from the
/// structure model's encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    /// V × emb_dim.
    pub output_embeddings: DenseMatrix,
}

impl SoftmaxModel {
    pub fn random<R: Rng + ?Sized>(num_items: usize, emb_dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / emb_dim as f64).sqrt();
        Self {
            output_embeddings: DenseMatrix::random_normal(num_items, emb_dim, std, rng),
        }
    }

    pub fn zeros(num_items: usize, emb_dim: usize) -> Self {
        Self {
            output_embeddings: DenseMatrix::zeros(num_items, emb_dim),
        }
    }

    pub fn num_items(&self) -> usize {
        self.output_embeddings.rows()
    }

    pub fn emb_dim(&self) -> usize {
        self.output_embeddings.cols()
    }

    pub fn score(&self, user: &[f64], item: usize) -> f64 {
        dot(user, self.output_embeddings.row(item))
    }

    pub(crate) fn check_encoder(&self, params: &StructureParams) -> Result<()> {
        if params.num_items() != self.num_items() || params.emb_dim != self.emb_dim() {
            return Err(DrError::shape(format!(
                "softmax model is {}×{}, encoder is {}×{}",
                self.num_items(),
                self.emb_dim(),
                params.num_items(),
                params.emb_dim
            )));
        }
        Ok(())
    }
}

/// `count` distinct negatives drawn uniformly from the items other than `positive`.
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: usize,
    num_items: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if positive >= num_items {
        return Err(DrError::input(format!(
            "positive item {positive} out of range"
        )));
    }
    if count == 0 || count >= num_items {
        return Err(DrError::input(format!(
            "negative count must be in 1..{num_items}, got {count}"
        )));
    }
    // Draw from 0..V-1 and skip over the positive, so it can never appear.
    Ok(index::sample(rng, num_items - 1, count)
        .into_iter()
        .map(|i| if i >= positive { i + 1 } else { i })
        .collect())
}

/// Loss and gradients of one sampled-softmax term.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxLoss {
    pub loss: f64,
    /// ∂loss/∂output_embeddings (non-zero only on the positive and negatives).
    pub grad_output: DenseMatrix,
    /// ∂loss/∂item_embeddings of the shared encoder.
    pub grad_items: DenseMatrix,
}

/// Cross-entropy of the positive against `negatives` for an encoded user.
///
/// Negative logits get `+ ln((V-1)/n)`, the log-inverse of their inclusion
/// probability under uniform sampling, so with all V-1 negatives this is
/// the full softmax. Accumulates `scale ·` gradients.
pub(crate) fn sampled_softmax_from_user(
    user: &[f64],
    positive: usize,
    negatives: &[usize],
    model: &SoftmaxModel,
    scale: f64,
    grad_output: Option<&mut DenseMatrix>,
    grad_user: &mut [f64],
) -> f64 {
    let v = model.num_items();
    let correction = ((v - 1) as f64 / negatives.len() as f64).ln();
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(model.score(user, positive));
    for &n in negatives {
        logits.push(model.score(user, n) + correction);
    }
    let log_probs = log_softmax_unchecked(&logits);
    let loss = -log_probs[0];
    let mut g = softmax_unchecked(&logits);
    g[0] -= 1.0;
    let rows = std::iter::once(positive).chain(negatives.iter().copied());
    let mut grad_output = grad_output;
    for (item, gi) in rows.zip(&g) {
        let w = scale * gi;
        let emb = model.output_embeddings.row(item);
        for (gu, e) in grad_user.iter_mut().zip(emb) {
            *gu += w * e;
        }
        if let Some(go) = grad_output.as_deref_mut() {
            for (o, u) in go.row_mut(item).iter_mut().zip(user) {
                *o += w * u;
            }
        }
    }
    loss
}

fn check_sample(
    ctx: &UserContext,
    positive: usize,
    model: &SoftmaxModel,
    params: &StructureParams,
) -> Result<()> {
    model.check_encoder(params)?;
    ctx.validate(params.num_items())?;
    if positive >= model.num_items() {
        return Err(DrError::input(format!(
            "positive item {positive} out of range"
        )));
    }
    Ok(())
}

/// Sampled-softmax loss against explicit negatives.
pub fn sampled_softmax_with_negatives(
    ctx: &UserContext,
    positive: usize,
    negatives: &[usize],
    model: &SoftmaxModel,
    params: &StructureParams,
) -> Result<SoftmaxLoss> {
    check_sample(ctx, positive, model, params)?;
    if negatives.is_empty() {
        return Err(DrError::input("at least one negative is required"));
    }
    if let Some(bad) = negatives
        .iter()
        .find(|&&n| n >= model.num_items() || n == positive)
    {
        return Err(DrError::input(format!("invalid negative {bad}")));
    }
    let user = user_embedding(ctx, params);
    let mut grad_output = DenseMatrix::zeros(model.num_items(), model.emb_dim());
    let mut grad_user = vec![0.0; model.emb_dim()];
    let loss = sampled_softmax_from_user(
        &user,
        positive,
        negatives,
        model,
        1.0,
        Some(&mut grad_output),
        &mut grad_user,
    );
    let mut grad_items = DenseMatrix::zeros(params.num_items(), params.emb_dim);
    MeanPool.backprop(ctx, &grad_user, 1.0, &mut grad_items);
    Ok(SoftmaxLoss {
        loss,
        grad_output,
        grad_items,
    })
}

/// Sampled-softmax loss with `negative_count` uniform negatives.
pub fn sampled_softmax_loss<R: Rng + ?Sized>(
    ctx: &UserContext,
    positive: usize,
    negative_count: usize,
    model: &SoftmaxModel,
    params: &StructureParams,
    rng: &mut R,
) -> Result<SoftmaxLoss> {
    check_sample(ctx, positive, model, params)?;
    let negatives = sample_negatives(positive, model.num_items(), negative_count, rng)?;
    sampled_softmax_with_negatives(ctx, positive, &negatives, model, params)
}

/// Full-softmax cross-entropy `-ln p(positive | ctx)`.
pub fn full_softmax_loss(
    ctx: &UserContext,
    positive: usize,
    model: &SoftmaxModel,
    params: &StructureParams,
) -> Result<f64> {
    check_sample(ctx, positive, model, params)?;
    let user = user_embedding(ctx, params);
    let logits: Vec<f64> = (0..model.num_items())
        .map(|i| model.score(&user, i))
        .collect();
    Ok(-log_softmax_unchecked(&logits)[positive])
}
