mod beam;
mod candidates;
mod mapping;

pub use beam::{beam_search, BeamEntry, PathScorer, QueryState};
pub use candidates::{
    adaptive_beam, candidates_from_paths, retrieve_candidates, AdaptiveBeam, Candidate,
};
pub(crate) use mapping::random_distinct_paths;
pub use mapping::ItemPathMapping;
