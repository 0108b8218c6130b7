use rand::Rng;

use super::config::StructureConfig;
use crate::error::{DrError, Result};
use crate::math::{axpy, DenseMatrix, Mlp};

/// Marks an empty slot in a padded behavior sequence.
pub const PADDING: usize = usize::MAX;

/// A user's behavior sequence, most recent item last.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserContext {
    behavior: Vec<usize>,
}

impl UserContext {
    /// Keeps the `max_len` most recent items.
    pub fn new(mut behavior: Vec<usize>, max_len: usize) -> Self {
        if behavior.len() > max_len {
            behavior.drain(..behavior.len() - max_len);
        }
        Self { behavior }
    }

    /// Truncate or left-fill with [`PADDING`] to exactly `len` entries.
    pub fn padded(behavior: &[usize], len: usize) -> Self {
        let mut out = Vec::with_capacity(len);
        if behavior.len() >= len {
            out.extend_from_slice(&behavior[behavior.len() - len..]);
        } else {
            out.resize(len - behavior.len(), PADDING);
            out.extend_from_slice(behavior);
        }
        Self { behavior: out }
    }

    pub fn behavior(&self) -> &[usize] {
        &self.behavior
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.behavior.iter().copied().filter(|&i| i != PADDING)
    }

    pub fn validate(&self, num_items: usize) -> Result<()> {
        match self.items().find(|&i| i >= num_items) {
            Some(bad) => Err(DrError::input(format!(
                "behavior item {bad} out of range for {num_items} items"
            ))),
            None => Ok(()),
        }
    }
}

/// Turns a behavior sequence into a fixed-width user embedding.
pub trait UserEncoder {
    fn encode(&self, ctx: &UserContext, item_embeddings: &DenseMatrix) -> Vec<f64>;

    /// Accumulate `scale · ∂L/∂items` given `∂L/∂user`.
    fn backprop(
        &self,
        ctx: &UserContext,
        grad_user: &[f64],
        scale: f64,
        grad_items: &mut DenseMatrix,
    );
}

/// Mean of the non-padding item embeddings; zero for an empty context.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanPool;

impl UserEncoder for MeanPool {
    fn encode(&self, ctx: &UserContext, item_embeddings: &DenseMatrix) -> Vec<f64> {
        let mut out = vec![0.0; item_embeddings.cols()];
        let mut n = 0usize;
        for i in ctx.items() {
            axpy(1.0, item_embeddings.row(i), &mut out);
            n += 1;
        }
        if n > 0 {
            let inv = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    fn backprop(
        &self,
        ctx: &UserContext,
        grad_user: &[f64],
        scale: f64,
        grad_items: &mut DenseMatrix,
    ) {
        let n = ctx.items().count();
        if n == 0 {
            return;
        }
        let w = scale / n as f64;
        for i in ctx.items() {
            axpy(w, grad_user, grad_items.row_mut(i));
        }
    }
}

/// Learned parameters of the path model. The same struct doubles as the
/// gradient accumulator (see [`StructureParams::zeros_like`]).
#[derive(Clone, Debug, PartialEq)]
pub struct StructureParams {
    pub k: usize,
    pub d: usize,
    pub emb_dim: usize,
    /// V × emb_dim; pooled into the user embedding.
    pub item_embeddings: DenseMatrix,
    /// One K × emb_dim table per layer.
    pub node_embeddings: Vec<DenseMatrix>,
    /// Layer `d` (0-based) maps `emb_dim · (d + 1)` inputs to K logits.
    pub layers: Vec<Mlp>,
}

impl StructureParams {
    pub fn random<R: Rng + ?Sized>(
        config: &StructureConfig,
        num_items: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let e = config.emb_dim;
        let emb_std = (1.0 / e as f64).sqrt();
        let item_embeddings = DenseMatrix::random_normal(num_items, e, emb_std, rng);
        let node_embeddings = (0..config.d)
            .map(|_| DenseMatrix::random_normal(config.k, e, emb_std, rng))
            .collect();
        let hidden = config.hidden_widths();
        let layers = (0..config.d)
            .map(|d| Mlp::random(e * (d + 1), &hidden, config.k, rng))
            .collect();
        Ok(Self {
            k: config.k,
            d: config.d,
            emb_dim: e,
            item_embeddings,
            node_embeddings,
            layers,
        })
    }

    pub fn zeros(config: &StructureConfig, num_items: usize) -> Result<Self> {
        config.validate()?;
        let e = config.emb_dim;
        let hidden = config.hidden_widths();
        Ok(Self {
            k: config.k,
            d: config.d,
            emb_dim: e,
            item_embeddings: DenseMatrix::zeros(num_items, e),
            node_embeddings: (0..config.d)
                .map(|_| DenseMatrix::zeros(config.k, e))
                .collect(),
            layers: (0..config.d)
                .map(|d| Mlp::zeros(e * (d + 1), &hidden, config.k))
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            k: self.k,
            d: self.d,
            emb_dim: self.emb_dim,
            item_embeddings: DenseMatrix::zeros(self.item_embeddings.rows(), self.emb_dim),
            node_embeddings: self
                .node_embeddings
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
            layers: self.layers.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_embeddings.rows()
    }

    /// Parameters of the path model proper: per-layer MLPs plus node embeddings
    /// (item embeddings belong to the user encoder and are excluded).
    pub fn structure_param_count(&self) -> usize {
        self.layers.iter().map(Mlp::param_count).sum::<usize>()
            + self
                .node_embeddings
                .iter()
                .map(|m| m.rows() * m.cols())
                .sum::<usize>()
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layers[layer].param_count()
    }

    /// Tensors in a fixed order: item embeddings, node embeddings per layer,
    /// then (weight, bias) of every affine layer of every MLP.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.item_embeddings.values()];
        out.extend(self.node_embeddings.iter().map(DenseMatrix::values));
        for mlp in &self.layers {
            out.extend(mlp.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.item_embeddings.values_mut()];
        out.extend(self.node_embeddings.iter_mut().map(DenseMatrix::values_mut));
        for mlp in &mut self.layers {
            out.extend(mlp.tensors_mut());
        }
        out
    }

    pub fn clear(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Closed-form count of [`StructureParams::structure_param_count`]:
/// Σ_d [layer-d MLP params] + D·K·e.
pub fn expected_structure_param_count(config: &StructureConfig) -> usize {
    let e = config.emb_dim;
    let hidden = config.hidden_widths();
    let mut total = config.d * config.k * e;
    for d in 0..config.d {
        let mut widths = vec![e * (d + 1)];
        widths.extend_from_slice(&hidden);
        widths.push(config.k);
        total += widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    }
    total
}

pub fn user_embedding(ctx: &UserContext, params: &StructureParams) -> Vec<f64> {
    MeanPool.encode(ctx, &params.item_embeddings)
}
