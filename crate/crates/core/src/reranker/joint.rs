use serde::{Deserialize, Serialize};

use super::softmax::{sampled_softmax_from_user, SoftmaxModel};
use crate::error::{DrError, Result};
use crate::math::DenseMatrix;
use crate::retrieval::ItemPathMapping;
use crate::structure::{
    multi_path_loss_from_user, penalty_value, user_embedding, MeanPool, PenaltyKind,
    StructureParams, UserContext, UserEncoder,
};

/// Relative weights of the two towers and the reranker freeze point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointObjectiveWeights {
    pub structure: f64,
    pub softmax: f64,
    /// Epochs (0-based) at or after this one leave the softmax output
    /// embeddings untouched.
    pub freeze_epoch: usize,
}

impl Default for JointObjectiveWeights {
    fn default() -> Self {
        Self {
            structure: 1.0,
            softmax: 1.0,
            freeze_epoch: 2,
        }
    }
}

impl JointObjectiveWeights {
    pub fn softmax_frozen(&self, epoch: usize) -> bool {
        epoch >= self.freeze_epoch
    }

    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        for (name, w) in [("structure", self.structure), ("softmax", self.softmax)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(DrError::config(format!(
                    "{name} weight must be finite and non-negative"
                )));
            }
        }
        if self.freeze_epoch > total_epochs {
            return Err(DrError::config(format!(
                "freeze epoch {} exceeds the {total_epochs} training epochs",
                self.freeze_epoch
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointObjective {
    pub weights: JointObjectiveWeights,
    pub alpha: f64,
    pub penalty: PenaltyKind,
}

/// Unweighted parts of a joint loss and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct JointLossTerms {
    pub structure: f64,
    /// α·Σ f(|c|); constant in the parameters, so it carries no gradient.
    pub penalty: f64,
    pub softmax: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointGrads {
    pub structure: StructureParams,
    pub output: DenseMatrix,
}

impl JointGrads {
    pub fn zeros_like(params: &StructureParams, model: &SoftmaxModel) -> Self {
        Self {
            structure: params.zeros_like(),
            output: DenseMatrix::zeros(model.num_items(), model.emb_dim()),
        }
    }

    pub fn clear(&mut self) {
        self.structure.clear();
        self.output.fill(0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss {
    pub terms: JointLossTerms,
    pub grads: JointGrads,
}

/// Both towers on one encoded user. Returns the unweighted (structure,
/// softmax) losses and accumulates `scale`-weighted gradients; the user
/// gradient of both towers lands in `grad_user`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn joint_from_user(
    user: &[f64],
    item: usize,
    mapping: &ItemPathMapping,
    params: &StructureParams,
    model: &SoftmaxModel,
    weights: &JointObjectiveWeights,
    negatives: &[usize],
    frozen: bool,
    scale: f64,
    grads: &mut JointGrads,
    grad_user: &mut [f64],
) -> (f64, f64) {
    let structure = if weights.structure > 0.0 {
        multi_path_loss_from_user(
            user,
            mapping.paths_of(item),
            params,
            scale * weights.structure,
            &mut grads.structure,
            grad_user,
        )
    } else {
        0.0
    };
    let softmax = if weights.softmax > 0.0 {
        let out = if frozen {
            None
        } else {
            Some(&mut grads.output)
        };
        sampled_softmax_from_user(
            user,
            item,
            negatives,
            model,
            scale * weights.softmax,
            out,
            grad_user,
        )
    } else {
        0.0
    };
    (structure, softmax)
}

/// `w_s·structure + penalty + w_sm·softmax` for one `(ctx, item)` sample,
/// with gradients for both towers. Once `epoch` reaches the freeze point
/// the output-embedding gradient is left at zero.
pub fn joint_loss(
    sample: (&UserContext, usize),
    mapping: &ItemPathMapping,
    params: &StructureParams,
    model: &SoftmaxModel,
    objective: &JointObjective,
    negatives: &[usize],
    epoch: usize,
) -> Result<JointLoss> {
    let (ctx, item) = sample;
    model.check_encoder(params)?;
    ctx.validate(params.num_items())?;
    if mapping.num_items() != params.num_items() {
        return Err(DrError::shape("mapping and model disagree on item count"));
    }
    if item >= params.num_items() {
        return Err(DrError::input(format!("item {item} out of range")));
    }
    for p in mapping.paths_of(item) {
        p.validate(params.k, params.d)?;
    }
    if objective.weights.softmax > 0.0
        && (negatives.is_empty()
            || negatives
                .iter()
                .any(|&n| n == item || n >= model.num_items()))
    {
        return Err(DrError::input(
            "negatives must be non-empty, in range and exclude the positive",
        ));
    }
    let penalty = penalty_value(mapping, objective.alpha, objective.penalty)?;
    let user = user_embedding(ctx, params);
    let mut grads = JointGrads::zeros_like(params, model);
    let mut grad_user = vec![0.0; params.emb_dim];
    let frozen = objective.weights.softmax_frozen(epoch);
    let (structure, softmax) = joint_from_user(
        &user,
        item,
        mapping,
        params,
        model,
        &objective.weights,
        negatives,
        frozen,
        1.0,
        &mut grads,
        &mut grad_user,
    );
    MeanPool.backprop(ctx, &grad_user, 1.0, &mut grads.structure.item_embeddings);
    let w = objective.weights;
    Ok(JointLoss {
        terms: JointLossTerms {
            structure,
            penalty,
            softmax,
            total: w.structure * structure + penalty + w.softmax * softmax,
        },
        grads,
    })
}
