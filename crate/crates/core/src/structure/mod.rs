//! The D-layer, K-node path model: user encoding, layer-conditional node
//! distributions, path log-probabilities, the multi-path loss and the
//! path-size penalty.

mod config;
mod model;
mod params;
mod path;
mod penalty;

pub use config::{path_count, StructureConfig};
pub(crate) use model::multi_path_loss_from_user;
pub use model::{distinct_paths, layer_distribution, multi_path_loss, path_log_prob};
pub use params::{
    expected_structure_param_count, user_embedding, MeanPool, StructureParams, UserContext,
    UserEncoder, PADDING,
};
pub use path::{enumerate_paths, PathId};
pub use penalty::{penalty_from_sizes, penalty_value, PenaltyKind};
