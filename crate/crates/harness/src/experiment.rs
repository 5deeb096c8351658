//! In-memory benchmark runs: generate a training set and a held-out set,
//! annotate both, train a scorer and correlate every score source with the
//! held-out physical annotations.

use std::collections::BTreeMap;

use mofid_core::annotator::{annotate_dataset, PhysicalAnnotation, ProjectionConfig};
use mofid_core::features::extract_features;
use mofid_core::metrics::{metric_registry, FidelityMetric, MetricInput, MetricKind};
use mofid_core::physics_metrics::PhysicsHeuristicConfig;
use mofid_core::scorer::{predict_scores, train, ScorerModel, TrainingConfig, TrainingItem, TrainingLog};
use mofid_core::stats::{CorrelationReport, ScoredMotion};
use mofid_core::{FidelityError, Result};
use rayon::prelude::*;

use crate::synth::{generate, SynthDataset, SynthSpec};

/// Seed offset of the held-out set relative to the training set.
pub const HELD_OUT_OFFSET: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub spec: SynthSpec,
    pub annotator: ProjectionConfig,
    pub heuristics: PhysicsHeuristicConfig,
    pub training: TrainingConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            spec: SynthSpec::standard(),
            annotator: ProjectionConfig::default(),
            heuristics: PhysicsHeuristicConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotatedSet {
    pub dataset: SynthDataset,
    /// Sorted by motion id, like `dataset.motions`.
    pub annotations: Vec<PhysicalAnnotation>,
}

impl AnnotatedSet {
    pub fn build(spec: &SynthSpec, seed: u64, cfg: &ProjectionConfig) -> Result<Self> {
        let dataset = generate(spec, seed)?;
        let annotations = annotate_dataset(&dataset.motion_list(), &dataset.skeleton.foot_indices, cfg)?;
        Ok(AnnotatedSet { dataset, annotations })
    }

    pub fn targets(&self) -> BTreeMap<String, f64> {
        self.annotations.iter().map(|a| (a.motion_id.clone(), a.physical_score)).collect()
    }

    pub fn training_items(&self, training: &TrainingConfig) -> Result<Vec<TrainingItem>> {
        let targets = self.targets();
        let sk = &self.dataset.skeleton;
        self.dataset
            .motions
            .par_iter()
            .map(|m| {
                let id = &m.recipe.id;
                Ok(TrainingItem {
                    id: id.clone(),
                    prompt: m.recipe.prompt.clone(),
                    features: extract_features(&m.motion, sk, &training.features)?,
                    target: *targets.get(id).ok_or_else(|| FidelityError::MissingScore(id.clone()))?,
                })
            })
            .collect()
    }

    /// Joins predicted scores with physical scores and prompt metadata.
    pub fn scored_rows(&self, predicted: &BTreeMap<String, f64>) -> Result<Vec<ScoredMotion>> {
        let targets = self.targets();
        self.dataset
            .motions
            .iter()
            .map(|m| {
                let id = &m.recipe.id;
                Ok(ScoredMotion {
                    id: id.clone(),
                    prompt: m.recipe.prompt.clone(),
                    collection: m.recipe.collection.clone(),
                    predicted: *predicted.get(id).ok_or_else(|| FidelityError::MissingScore(id.clone()))?,
                    target: targets[id],
                })
            })
            .collect()
    }

    pub fn report(&self, source: &str, predicted: &BTreeMap<String, f64>, detailed: Option<&str>) -> Result<CorrelationReport> {
        CorrelationReport::build(source, &self.scored_rows(predicted)?, &self.dataset.pairs, detailed)
    }

    pub fn metric_scores(&self, metric: &dyn FidelityMetric) -> Result<BTreeMap<String, f64>> {
        let sk = &self.dataset.skeleton;
        self.dataset
            .motions
            .par_iter()
            .map(|m| {
                let input = MetricInput { motion: &m.motion, skeleton: sk, reference: Some(&m.reference) };
                Ok((m.recipe.id.clone(), metric.score(&input)?))
            })
            .collect()
    }

    pub fn model_scores(&self, model: &ScorerModel) -> Result<BTreeMap<String, f64>> {
        predict_scores(model, &self.dataset.motion_list(), &self.dataset.skeleton)
    }
}

/// A training set and its held-out counterpart for one seed.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub seed: u64,
    pub train: AnnotatedSet,
    pub held_out: AnnotatedSet,
    pub cfg: BenchmarkConfig,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: ScorerModel,
    pub log: TrainingLog,
    pub held_out: CorrelationReport,
}

impl Benchmark {
    pub fn prepare(seed: u64, cfg: &BenchmarkConfig) -> Result<Self> {
        Ok(Benchmark {
            seed,
            train: AnnotatedSet::build(&cfg.spec, seed, &cfg.annotator)?,
            held_out: AnnotatedSet::build(&cfg.spec, seed + HELD_OUT_OFFSET, &cfg.annotator)?,
            cfg: cfg.clone(),
        })
    }

    /// Trains with `training` (its seed replaced by the benchmark seed) and
    /// scores the held-out set.
    pub fn train_and_evaluate(&self, training: &TrainingConfig, source: &str) -> Result<TrainedRun> {
        let training = TrainingConfig { seed: self.seed, ..training.clone() };
        let items = self.train.training_items(&training)?;
        let (model, mut log) = train(&items, &self.train.dataset.pairs, &training)?;
        let held_out = self.held_out.report(source, &self.held_out.model_scores(&model)?, Some("A"))?;
        let t = &held_out.total;
        for (k, v) in [("plcc", t.plcc), ("srocc", t.srocc), ("krocc", t.krocc), ("accuracy", held_out.pairwise_accuracy)] {
            if let Some(v) = v {
                log.validation.insert(k.into(), v);
            }
        }
        Ok(TrainedRun { model, log, held_out })
    }

    /// Held-out reports of every registered physics heuristic.
    pub fn heuristic_reports(&self) -> Result<Vec<CorrelationReport>> {
        let reg = metric_registry(self.cfg.heuristics);
        reg.iter()
            .filter(|(_, m)| m.kind() == MetricKind::Physics)
            .map(|(_, m)| self.held_out.report(m.label(), &self.held_out.metric_scores(m.as_ref())?, Some("A")))
            .collect()
    }
}
