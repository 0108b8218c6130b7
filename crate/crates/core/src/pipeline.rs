//! End-to-end run: interactions to held-out split, trained model, metrics.

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    evaluate, make_split, user_histories, EvalSplit, EvalUser, InteractionRecord, ItemVocab,
    MetricReport, TrainingSet,
};
use crate::em::{EmTrainer, EpochStats};
use crate::error::{DrError, Result};
use crate::model::DeepRetrievalModel;
use crate::structure::UserContext;

/// Dense item vocabulary, held-out users and next-item training samples.
pub struct PreparedData {
    pub vocab: ItemVocab,
    pub split: EvalSplit,
    pub training: TrainingSet,
}

/// Build the vocabulary from `records` and split users by the run seed.
pub fn prepare(records: &[InteractionRecord], config: &RunConfig) -> Result<PreparedData> {
    prepare_with_vocab(records, ItemVocab::from_records(records), config)
}

/// As [`prepare`] with a fixed vocabulary; interactions with unknown items
/// are dropped.
pub fn prepare_with_vocab(
    records: &[InteractionRecord],
    vocab: ItemVocab,
    config: &RunConfig,
) -> Result<PreparedData> {
    if vocab.is_empty() {
        return Err(DrError::input("no items in the interaction data"));
    }
    let histories = user_histories(records, &vocab);
    let split = make_split(
        &histories,
        config.data.validation_users,
        config.data.test_users,
        config.seed,
    )?;
    let training = TrainingSet::from_split(&split, config.structure.max_seq_len);
    Ok(PreparedData {
        vocab,
        split,
        training,
    })
}

/// Train a model on `data.training`, reporting after every epoch.
pub fn train(
    config: &RunConfig,
    data: &PreparedData,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<Checkpoint> {
    config.validate()?;
    let mut trainer = EmTrainer::new(
        config.structure.clone(),
        config.training.clone(),
        data.vocab.len(),
        config.seed,
    )?;
    trainer.train(&data.training, on_epoch)?;
    Ok(Checkpoint {
        config: config.clone(),
        model: trainer.into_model(),
        item_ids: data.vocab.ids().to_vec(),
    })
}

/// How a query is answered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RetrievalMode {
    /// Beam search with a fixed beam, then rerank.
    Beam(usize),
    /// Beam sized so candidates land in `[lo·k, hi·k]` where possible.
    Adaptive(f64, f64),
    /// Exact top-k over all items.
    BruteForce,
}

impl RetrievalMode {
    /// Beam or adaptive retrieval as configured in `config`.
    pub fn from_config(config: &RunConfig) -> Self {
        match config.eval.adaptive {
            Some([lo, hi]) => Self::Adaptive(lo, hi),
            None => Self::Beam(config.structure.beam),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Beam(_) | Self::Adaptive(..) => "deep_retrieval",
            Self::BruteForce => "brute_force",
        }
    }
}

/// Metrics of one retrieval method over a user group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub method: String,
    /// Fixed beam, or the mean beam under adaptive sizing.
    pub beam: Option<f64>,
    pub mean_candidates: Option<f64>,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

pub fn evaluate_model(
    model: &DeepRetrievalModel,
    users: &[EvalUser],
    k: usize,
    mode: RetrievalMode,
) -> Result<EvalRecord> {
    let retriever = model.retriever();
    let max_len = model.config.max_seq_len;
    let mut candidates = 0usize;
    let mut beams = 0usize;
    let mut queries = 0usize;
    let metrics = evaluate(users, k, |u| {
        let ctx = UserContext::new(u.behavior.clone(), max_len);
        let result = match mode {
            RetrievalMode::Beam(b) => retriever.retrieve(&ctx, k, b)?,
            RetrievalMode::Adaptive(lo, hi) => retriever.retrieve_adaptive(&ctx, k, (lo, hi))?,
            RetrievalMode::BruteForce => {
                return Ok(retriever
                    .brute_force(&ctx, k)?
                    .iter()
                    .map(|r| r.item)
                    .collect());
            }
        };
        candidates += result.candidates;
        beams += result.beam;
        queries += 1;
        Ok(result.items.iter().map(|r| r.item).collect())
    })?;
    let per_query = |total: usize| (queries > 0).then(|| total as f64 / queries as f64);
    Ok(EvalRecord {
        method: mode.name().to_string(),
        beam: per_query(beams),
        mean_candidates: per_query(candidates),
        metrics,
    })
}
