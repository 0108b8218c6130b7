mod metrics;
mod records;
mod split;
mod synth;

pub use metrics::{evaluate, user_metrics, MetricReport};
pub use records::{
    corpus_stats, preprocess, read_interactions, read_interactions_path, user_histories,
    write_interactions, CorpusStats, InteractionRecord, ItemVocab, PreprocessConfig, ReadReport,
    UserHistory, DEFAULT_RATING,
};
pub use split::{make_split, EvalSplit, EvalUser, TrainingSet};
pub use synth::{cluster_purity, synth_clusters, SynthConfig, SynthCorpus};
