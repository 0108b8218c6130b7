mod joint;
mod rank;
mod softmax;

pub use joint::{
    joint_loss, JointGrads, JointLoss, JointLossTerms, JointObjective, JointObjectiveWeights,
};
pub use rank::{brute_force_retrieve, rerank, Ranked, Reranked};
pub use softmax::{
    full_softmax_loss, sample_negatives, sampled_softmax_loss, sampled_softmax_with_negatives,
    SoftmaxLoss, SoftmaxModel,
};

pub(crate) use joint::joint_from_user;
pub(crate) use rank::{brute_force_user, rerank_user};
