mod assign;
mod scores;
mod surrogate;
mod trainer;

pub use assign::{coordinate_descent_assign, surrogate_objective, AssignOptions, AssignReport};
pub use scores::{accumulate_scores, streaming_score_update, ScoreTable};
pub use surrogate::{bound_terms, structure_bound_check, BoundCheck};
pub use trainer::{em_epoch, EmConfig, EmTrainer, EpochStats};
