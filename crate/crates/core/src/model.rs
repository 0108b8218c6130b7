use crate::em::ScoreTable;
use crate::error::{DrError, Result};
use crate::reranker::{brute_force_user, rerank_user, Ranked, SoftmaxModel};
use crate::retrieval::{Candidate, ItemPathMapping, PathScorer};
use crate::structure::{user_embedding, StructureConfig, StructureParams, UserContext};

/// Everything needed to answer queries: the path model, its item mapping,
/// the reranker and the score table the mapping came from.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepRetrievalModel {
    pub config: StructureConfig,
    pub params: StructureParams,
    pub reranker: SoftmaxModel,
    pub mapping: ItemPathMapping,
    pub scores: ScoreTable,
}

impl DeepRetrievalModel {
    pub fn num_items(&self) -> usize {
        self.params.num_items()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let v = self.num_items();
        if self.reranker.num_items() != v
            || self.mapping.num_items() != v
            || self.scores.num_items() != v
        {
            return Err(DrError::shape(
                "model parts disagree on the number of items",
            ));
        }
        if self.params.k != self.config.k
            || self.params.d != self.config.d
            || self.params.emb_dim != self.config.emb_dim
        {
            return Err(DrError::shape(
                "parameters do not match the structure config",
            ));
        }
        if self.mapping.paths_per_item() != self.config.j {
            return Err(DrError::shape("mapping multiplicity does not match J"));
        }
        for paths in self.mapping.assignments() {
            for p in paths {
                p.validate(self.config.k, self.config.d)?;
            }
        }
        self.mapping.check_consistency()
    }

    pub fn retriever(&self) -> Retriever<'_> {
        Retriever {
            model: self,
            scorer: PathScorer::new(&self.params),
        }
    }
}

/// Output of one retrieval query.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub items: Vec<Ranked>,
    /// Size of the candidate set before reranking.
    pub candidates: usize,
    pub beam: usize,
}

/// Query-side view of a model with inference caches built once.
pub struct Retriever<'a> {
    model: &'a DeepRetrievalModel,
    scorer: PathScorer<'a>,
}

impl Retriever<'_> {
    pub fn model(&self) -> &DeepRetrievalModel {
        self.model
    }

    fn encode(&self, ctx: &UserContext) -> Result<Vec<f64>> {
        ctx.validate(self.model.num_items())?;
        Ok(user_embedding(ctx, &self.model.params))
    }

    pub fn candidates(&self, ctx: &UserContext, beam: usize) -> Result<Vec<Candidate>> {
        if beam == 0 {
            return Err(DrError::input("beam size must be at least 1"));
        }
        let user = self.encode(ctx)?;
        Ok(self.scorer.retrieve_user(&user, &self.model.mapping, beam))
    }

    fn finish(&self, user: &[f64], candidates: &[Candidate], k: usize, beam: usize) -> Retrieval {
        let ids: Vec<usize> = candidates.iter().map(|c| c.item).collect();
        Retrieval {
            items: rerank_user(user, &ids, &self.model.reranker, k).items,
            candidates: ids.len(),
            beam,
        }
    }

    /// Beam search with a fixed beam, then rerank the candidates.
    pub fn retrieve(&self, ctx: &UserContext, k: usize, beam: usize) -> Result<Retrieval> {
        if beam == 0 || k == 0 {
            return Err(DrError::input("beam and k must be at least 1"));
        }
        let user = self.encode(ctx)?;
        let cands = self.scorer.retrieve_user(&user, &self.model.mapping, beam);
        Ok(self.finish(&user, &cands, k, beam))
    }

    /// As [`Retriever::retrieve`], with the beam sized to yield
    /// `multipliers.0 · k` to `multipliers.1 · k` candidates where possible.
    pub fn retrieve_adaptive(
        &self,
        ctx: &UserContext,
        k: usize,
        multipliers: (f64, f64),
    ) -> Result<Retrieval> {
        if k == 0 || !(multipliers.0 > 0.0 && multipliers.0 <= multipliers.1) {
            return Err(DrError::input(
                "k must be positive and the multiplier range ordered",
            ));
        }
        let user = self.encode(ctx)?;
        let adaptive = self
            .scorer
            .adaptive_user(&user, &self.model.mapping, k, multipliers);
        Ok(self.finish(&user, &adaptive.candidates, k, adaptive.beam))
    }

    /// Exact top-k by reranker score over the whole corpus.
    pub fn brute_force(&self, ctx: &UserContext, k: usize) -> Result<Vec<Ranked>> {
        if k == 0 || k > self.model.num_items() {
            return Err(DrError::input(format!(
                "k must be in 1..={}",
                self.model.num_items()
            )));
        }
        let user = self.encode(ctx)?;
        Ok(brute_force_user(&user, &self.model.reranker, k))
    }
}
