//! The EM loop. Each epoch runs minibatch gradient steps on the joint
//! objective with the mapping held fixed, folds beam-proposed path
//! probabilities into the score table along the way, and finishes with a
//! coordinate-descent reassignment of items to paths.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::assign::{coordinate_descent_assign, surrogate_objective, AssignOptions};
use super::scores::{accumulate_with_scorer, ScoreTable};
use crate::data::TrainingSet;
use crate::error::{DrError, Result};
use crate::math::{OptimizerConfig, OptimizerState};
use crate::model::DeepRetrievalModel;
use crate::reranker::{
    joint_from_user, sample_negatives, JointGrads, JointObjectiveWeights, SoftmaxModel,
};
use crate::retrieval::{ItemPathMapping, PathScorer};
use crate::rng::{self, StreamRng};
use crate::structure::{
    penalty_value, user_embedding, MeanPool, StructureConfig, StructureParams, UserEncoder,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub epochs: usize,
    /// Gradient passes over the data per epoch; 0 only accumulates scores.
    pub e_step_passes: usize,
    pub batch_size: usize,
    /// Coordinate-descent sweeps per M-step.
    pub cd_iterations: usize,
    pub negatives: usize,
    pub optimizer: OptimizerConfig,
    pub joint: JointObjectiveWeights,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            e_step_passes: 1,
            batch_size: 256,
            cd_iterations: 3,
            negatives: 100,
            optimizer: OptimizerConfig::adam(3e-3),
            joint: JointObjectiveWeights::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_iterations == 0 {
            return Err(DrError::config("cd_iterations must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(DrError::config("batch_size must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(DrError::config("negatives must be at least 1"));
        }
        self.joint.validate(self.epochs)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub softmax_frozen: bool,
    /// Mean weighted loss of every minibatch, in order.
    pub batch_losses: Vec<f64>,
    pub mean_structure_loss: f64,
    pub mean_softmax_loss: f64,
    pub penalty: f64,
    pub surrogate_per_sweep: Vec<f64>,
    pub surrogate: f64,
    pub top_path_size: usize,
    pub nonempty_paths: usize,
    /// Counts of non-empty paths with size in `[2^b, 2^(b+1))`.
    pub path_size_histogram: Vec<usize>,
    pub random_fallbacks: usize,
    pub padded_items: usize,
}

/// Training state across epochs.
pub struct EmTrainer {
    structure: StructureConfig,
    config: EmConfig,
    params: StructureParams,
    reranker: SoftmaxModel,
    mapping: ItemPathMapping,
    table: ScoreTable,
    structure_opt: OptimizerState,
    reranker_opt: OptimizerState,
    shuffle_rng: StreamRng,
    negative_rng: StreamRng,
    assign_rng: StreamRng,
    epoch: usize,
}

impl EmTrainer {
    /// Random parameters and a random J-path mapping, all drawn from `seed`.
    pub fn new(
        structure: StructureConfig,
        config: EmConfig,
        num_items: usize,
        seed: u64,
    ) -> Result<Self> {
        structure.validate()?;
        config.validate()?;
        if num_items < 2 {
            return Err(DrError::input("training needs at least two items"));
        }
        let mut init = rng::stream(seed, rng::INIT);
        let params = StructureParams::random(&structure, num_items, &mut init)?;
        let reranker = SoftmaxModel::random(num_items, structure.emb_dim, &mut init);
        let mapping =
            ItemPathMapping::random(num_items, structure.k, structure.d, structure.j, &mut init)?;
        let table = ScoreTable::new(num_items, structure.score_capacity)?;
        let lengths: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let structure_opt = OptimizerState::new(config.optimizer, &lengths)?;
        let reranker_opt = OptimizerState::new(
            config.optimizer,
            &[reranker.output_embeddings.values().len()],
        )?;
        Ok(Self {
            structure,
            config,
            params,
            reranker,
            mapping,
            table,
            structure_opt,
            reranker_opt,
            shuffle_rng: rng::stream(seed, rng::SHUFFLE),
            negative_rng: rng::stream(seed, rng::NEGATIVES),
            assign_rng: rng::stream(seed, rng::ASSIGN),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &StructureParams {
        &self.params
    }

    pub fn reranker(&self) -> &SoftmaxModel {
        &self.reranker
    }

    pub fn mapping(&self) -> &ItemPathMapping {
        &self.mapping
    }

    pub fn scores(&self) -> &ScoreTable {
        &self.table
    }

    pub fn into_model(self) -> DeepRetrievalModel {
        DeepRetrievalModel {
            config: self.structure,
            params: self.params,
            reranker: self.reranker,
            mapping: self.mapping,
            scores: self.table,
        }
    }

    fn check_data(&self, data: &TrainingSet) -> Result<()> {
        match data.max_item() {
            Some(m) if m >= self.params.num_items() => Err(DrError::input(format!(
                "training item {m} outside the {} known items",
                self.params.num_items()
            ))),
            _ => Ok(()),
        }
    }

    /// One E-step pass: gradient steps on every minibatch, folding path
    /// scores in first when `accumulate` is set.
    fn gradient_pass(
        &mut self,
        data: &TrainingSet,
        order: &[usize],
        accumulate: bool,
        stats: &mut (Vec<f64>, f64, f64, usize),
    ) -> Result<()> {
        let frozen = self.config.joint.softmax_frozen(self.epoch);
        let weights = self.config.joint;
        let negatives = self.config.negatives.min(self.params.num_items() - 1);
        let mut grads = JointGrads::zeros_like(&self.params, &self.reranker);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| data.sample(i)).collect();
            if accumulate {
                let scorer = PathScorer::new(&self.params);
                accumulate_with_scorer(
                    &batch,
                    &scorer,
                    &mut self.table,
                    self.structure.score_capacity,
                    self.structure.eta,
                )?;
            }
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            let (mut s_sum, mut m_sum) = (0.0, 0.0);
            for (ctx, item) in &batch {
                let user = user_embedding(ctx, &self.params);
                let negs = sample_negatives(
                    *item,
                    self.params.num_items(),
                    negatives,
                    &mut self.negative_rng,
                )?;
                let mut grad_user = vec![0.0; self.params.emb_dim];
                let (s, m) = joint_from_user(
                    &user,
                    *item,
                    &self.mapping,
                    &self.params,
                    &self.reranker,
                    &weights,
                    &negs,
                    frozen,
                    scale,
                    &mut grads,
                    &mut grad_user,
                );
                MeanPool.backprop(ctx, &grad_user, 1.0, &mut grads.structure.item_embeddings);
                s_sum += s;
                m_sum += m;
            }
            {
                let g: Vec<&[f64]> = grads.structure.tensors();
                let mut p = self.params.tensors_mut();
                self.structure_opt.step(&mut p, &g)?;
            }
            if !frozen {
                let g = [grads.output.values()];
                let mut p = [self.reranker.output_embeddings.values_mut()];
                self.reranker_opt.step(&mut p, &g)?;
            }
            stats
                .0
                .push(scale * (weights.structure * s_sum + weights.softmax * m_sum));
            stats.1 += s_sum;
            stats.2 += m_sum;
            stats.3 += batch.len();
        }
        Ok(())
    }

    /// One EM epoch over `data`; see the module docs.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochStats> {
        self.check_data(data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut stats = (Vec::new(), 0.0, 0.0, 0usize);
        if self.config.e_step_passes == 0 {
            let scorer = PathScorer::new(&self.params);
            for chunk in order.chunks(self.config.batch_size.max(1)) {
                let batch: Vec<_> = chunk.iter().map(|&i| data.sample(i)).collect();
                accumulate_with_scorer(
                    &batch,
                    &scorer,
                    &mut self.table,
                    self.structure.score_capacity,
                    self.structure.eta,
                )?;
            }
        }
        for pass in 0..self.config.e_step_passes {
            order.shuffle(&mut self.shuffle_rng);
            self.gradient_pass(data, &order, pass == 0, &mut stats)?;
        }
        if !self.params.is_finite() {
            return Err(DrError::Consistency("parameters became non-finite".into()));
        }

        let options = AssignOptions {
            alpha: self.structure.alpha,
            paths_per_item: self.structure.j,
            iterations: self.config.cd_iterations,
            penalty: self.structure.penalty,
            k: self.structure.k,
            d: self.structure.d,
        };
        let (mapping, report) = coordinate_descent_assign(
            &self.table,
            &options,
            Some(&self.mapping),
            &mut self.assign_rng,
        )?;
        self.mapping = mapping;
        let surrogate = surrogate_objective(
            &self.table,
            &self.mapping,
            self.structure.alpha,
            self.structure.penalty,
        )?;
        let penalty = penalty_value(&self.mapping, self.structure.alpha, self.structure.penalty)?;
        let n = stats.3.max(1) as f64;
        let out = EpochStats {
            epoch: self.epoch,
            softmax_frozen: self.config.joint.softmax_frozen(self.epoch),
            batch_losses: stats.0,
            mean_structure_loss: stats.1 / n,
            mean_softmax_loss: stats.2 / n,
            penalty,
            surrogate_per_sweep: report.objective_per_sweep,
            surrogate,
            top_path_size: self.mapping.top_path_size(),
            nonempty_paths: self.mapping.nonempty_paths(),
            path_size_histogram: self.mapping.size_histogram(),
            random_fallbacks: report.random_fallbacks,
            padded_items: report.padded_items,
        };
        self.epoch += 1;
        Ok(out)
    }

    /// Run the remaining configured epochs, reporting each as it finishes.
    pub fn train(
        &mut self,
        data: &TrainingSet,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let mut all = Vec::new();
        while self.epoch < self.config.epochs {
            let s = self.run_epoch(data)?;
            on_epoch(&s);
            all.push(s);
        }
        Ok(all)
    }
}

/// One EM epoch on `trainer`'s state.
pub fn em_epoch(trainer: &mut EmTrainer, data: &TrainingSet) -> Result<EpochStats> {
    trainer.run_epoch(data)
}
