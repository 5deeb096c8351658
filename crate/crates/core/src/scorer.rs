//! Trainable fidelity scorer: fixed feature encoder followed by a small MLP
//! (tanh hidden layers, linear scalar output), trained on the combined
//! pairwise + correlation objective with plain gradient descent.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MotionPair;
use crate::error::{FidelityError, Result};
use crate::features::{extract_features, FeatureConfig};
use crate::losses::{objective_registry, total_loss_with, CorrelationObjective, LossConfig, TotalLoss};
use crate::motion::{MotionSequence, Skeleton};

pub const MODEL_FORMAT: &str = "mofid-scorer/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population statistics; features with (near) zero spread keep unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(FidelityError::DegenerateInput("no feature rows to normalize".into()));
        };
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Ok(Normalization { mean, std })
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Feature encoder settings plus MLP weights. Weights are row-major
/// `out × in` per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub format: String,
    pub feature_config: FeatureConfig,
    pub layer_sizes: Vec<usize>,
    pub normalization: Normalization,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ScorerModel {
    /// Glorot-uniform weights and zero biases.
    pub fn init(layer_sizes: &[usize], feature_config: FeatureConfig, rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || *layer_sizes.last().unwrap() != 1 || layer_sizes.contains(&0) {
            return Err(FidelityError::Config(format!(
                "layer sizes must be non-zero and end in 1, got {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push((0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Ok(ScorerModel {
            format: MODEL_FORMAT.into(),
            feature_config,
            layer_sizes: layer_sizes.to_vec(),
            normalization: Normalization::identity(layer_sizes[0]),
            weights,
            biases,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(FidelityError::Config(format!("unsupported model format `{}`", self.format)));
        }
        let ls = &self.layer_sizes;
        let ok = ls.len() >= 2
            && ls.last() == Some(&1)
            && self.weights.len() == ls.len() - 1
            && self.biases.len() == ls.len() - 1
            && ls.windows(2).zip(&self.weights).all(|(w, m)| m.len() == w[0] * w[1])
            && ls[1..].iter().zip(&self.biases).all(|(n, b)| b.len() == *n)
            && self.normalization.mean.len() == ls[0]
            && self.normalization.std.len() == ls[0];
        if !ok {
            return Err(FidelityError::Shape("model weights do not match layer sizes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(FidelityError::Shape(format!("{} parameters for a {}-parameter model", flat.len(), self.param_count())));
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            b.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Layer activations for one normalized input; the last entry is the score.
    fn activations(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![input];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = acts.last().unwrap();
            let n_in = x.len();
            let out: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let z = bias + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                    if l == last { z } else { z.tanh() }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Adds `d_score · ∂score/∂θ` into `grad` (flat layout of [`Self::params`]).
    fn backward(&self, acts: &[Vec<f64>], d_score: f64, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .weights
            .iter()
            .zip(&self.biases)
            .scan(0, |acc, (w, b)| {
                let o = *acc;
                *acc += w.len() + b.len();
                Some(o)
            })
            .collect();
        let mut delta = vec![d_score];
        for l in (0..self.weights.len()).rev() {
            let x = &acts[l];
            let n_in = x.len();
            let w = &self.weights[l];
            let off = offsets[l];
            for (o, d) in delta.iter().enumerate() {
                for i in 0..n_in {
                    grad[off + o * n_in + i] += d * x[i];
                }
                grad[off + w.len() + o] += d;
            }
            if l > 0 {
                // x = tanh(z) of the previous layer
                delta = (0..n_in)
                    .map(|i| {
                        let s: f64 = delta.iter().enumerate().map(|(o, d)| d * w[o * n_in + i]).sum();
                        s * (1.0 - x[i] * x[i])
                    })
                    .collect();
            }
        }
    }

    /// Score of one raw feature vector; higher means better fidelity.
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(FidelityError::Shape(format!(
                "{} features for a {}-input model",
                features.len(),
                self.input_dim()
            )));
        }
        Ok(self.activations(self.normalization.apply(features)).last().unwrap()[0])
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| FidelityError::Invariant(e.to_string()))
    }

    pub fn from_json(text: &str, path: &std::path::Path) -> Result<Self> {
        let m: ScorerModel = serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                FidelityError::Schema { path: path.into(), message: e.to_string() }
            } else {
                FidelityError::Parse { path: path.into(), message: e.to_string() }
            }
        })?;
        m.validate()?;
        Ok(m)
    }
}

/// Loss of one batch and its gradient with respect to all MLP parameters.
///
/// `inputs` are raw feature rows; `pairs` index into them as
/// `(better, worse)`; `targets` are the physical scores.
pub fn batch_loss_and_param_grad(
    model: &ScorerModel,
    inputs: &[&[f64]],
    pairs: &[(usize, usize)],
    targets: &[f64],
    objective: &dyn CorrelationObjective,
    loss: &LossConfig,
) -> Result<(TotalLoss, Vec<f64>)> {
    let acts: Vec<Vec<Vec<f64>>> =
        inputs.iter().map(|f| model.activations(model.normalization.apply(f))).collect();
    let scores: Vec<f64> = acts.iter().map(|a| a.last().unwrap()[0]).collect();
    let total = total_loss_with(objective, &scores, pairs, targets, loss)?;
    let mut grad = vec![0.0; model.param_count()];
    for (a, g) in acts.iter().zip(&total.grad) {
        if *g != 0.0 {
            model.backward(a, *g, &mut grad);
        }
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub lambda: f64,
    pub seed: u64,
    pub prompt_categorized: bool,
    pub hidden_layers: Vec<usize>,
    /// Registered correlation objective (`pearson` or `mse`).
    pub objective: String,
    /// Encoder settings recorded in the model; must match how the
    /// training features were extracted.
    pub features: FeatureConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 4e-3,
            lr_decay_per_epoch: 0.995,
            lambda: 0.3,
            seed: 0,
            prompt_categorized: true,
            hidden_layers: vec![64, 32],
            objective: "pearson".into(),
            features: FeatureConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(FidelityError::Config("epochs must be > 0 and batch_size >= 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FidelityError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(FidelityError::Config(format!(
                "lr_decay_per_epoch must be in (0, 1], got {}",
                self.lr_decay_per_epoch
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FidelityError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.hidden_layers.contains(&0) {
            return Err(FidelityError::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One training motion: raw features, prompt group and physical score.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub prompt: String,
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub perceptual: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Filled in by callers that evaluate on held-out data.
    pub validation: BTreeMap<String, f64>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,learning_rate,total,perceptual,correlation\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.learning_rate, e.total, e.perceptual, e.correlation));
        }
        out
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

fn batches(items: &[TrainingItem], cfg: &TrainingConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if cfg.prompt_categorized {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, it) in items.iter().enumerate() {
            groups.entry(&it.prompt).or_default().push(i);
        }
        let mut out = Vec::new();
        for (_, mut idx) in groups {
            if idx.len() > cfg.batch_size {
                idx.shuffle(rng);
            }
            out.extend(idx.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        out.shuffle(rng);
        out
    } else {
        let mut idx: Vec<usize> = (0..items.len()).collect();
        idx.shuffle(rng);
        idx.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Gradient descent on the combined objective. Deterministic for a given
/// `cfg.seed`.
///
/// With prompt categorization each step sees the motions of one prompt
/// (split into chunks of at most `batch_size`); otherwise batches mix
/// prompts. Pairs only count when both motions are in the batch, and the
/// correlation term is skipped for batches whose targets are constant.
pub fn train(items: &[TrainingItem], pairs: &[MotionPair], cfg: &TrainingConfig) -> Result<(ScorerModel, TrainingLog)> {
    cfg.validate()?;
    let objective = objective_registry().get(&cfg.objective)?;
    if items.len() < 2 {
        return Err(FidelityError::Config("training needs at least 2 motions".into()));
    }
    let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        *group_sizes.entry(&it.prompt).or_default() += 1;
    }
    if let Some((p, _)) = group_sizes.iter().find(|(_, &n)| n < 2) {
        return Err(FidelityError::Config(format!("prompt group `{p}` has fewer than 2 motions")));
    }
    let dim = items[0].features.len();
    if items.iter().any(|it| it.features.len() != dim) {
        return Err(FidelityError::Shape("feature rows differ in length".into()));
    }
    let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut pair_idx = Vec::with_capacity(pairs.len());
    for p in pairs {
        let h = *index.get(p.better_id.as_str()).ok_or_else(|| FidelityError::MissingScore(p.better_id.clone()))?;
        let l = *index.get(p.worse_id.as_str()).ok_or_else(|| FidelityError::MissingScore(p.worse_id.clone()))?;
        pair_idx.push((h, l));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(1);
    let mut model = ScorerModel::init(&sizes, cfg.features, &mut rng)?;
    let rows: Vec<Vec<f64>> = items.iter().map(|it| it.features.clone()).collect();
    model.normalization = Normalization::fit(&rows)?;

    let mut log = TrainingLog::default();
    let mut params = model.params();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay_per_epoch.powi(epoch as i32);
        let (mut tot, mut per, mut cor, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in batches(items, cfg, &mut rng) {
            let local: HashMap<usize, usize> = batch.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let bp: Vec<(usize, usize)> = pair_idx
                .iter()
                .filter_map(|(h, l)| Some((*local.get(h)?, *local.get(l)?)))
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&i| items[i].target).collect();
            let use_corr = batch.len() >= 2 && !is_constant(&targets);
            if bp.is_empty() && !use_corr {
                continue;
            }
            let loss_cfg = LossConfig { lambda: if use_corr { cfg.lambda } else { 0.0 }, ..LossConfig::default() };
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| items[i].features.as_slice()).collect();
            let (loss, grad) = match batch_loss_and_param_grad(&model, &inputs, &bp, &targets, objective.as_ref(), &loss_cfg) {
                Ok(v) => v,
                // constant predictions leave the correlation gradient undefined
                Err(FidelityError::DegenerateInput(_)) if !bp.is_empty() => {
                    let no_corr = LossConfig { lambda: 0.0, ..loss_cfg };
                    batch_loss_and_param_grad(&model, &inputs, &bp, &targets, objective.as_ref(), &no_corr)?
                }
                Err(e) => return Err(e),
            };
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            model.set_params(&params)?;
            tot += loss.value;
            per += loss.perceptual;
            cor += loss.correlation;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        log.epochs.push(EpochLog { epoch, learning_rate: lr, total: tot / k, perceptual: per / k, correlation: cor / k });
    }
    Ok((model, log))
}

/// Scores every motion; output keyed and ordered by motion id.
pub fn predict_scores(
    model: &ScorerModel,
    motions: &[(String, MotionSequence)],
    skeleton: &Skeleton,
) -> Result<BTreeMap<String, f64>> {
    motions
        .par_iter()
        .map(|(id, m)| {
            let f = extract_features(m, skeleton, &model.feature_config)?;
            Ok((id.clone(), model.forward(&f)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{grad_check, PearsonObjective};

    fn tiny_model(seed: u64) -> ScorerModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScorerModel::init(&[3, 4, 2, 1], FeatureConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut m = tiny_model(1);
        let n = m.param_count();
        m.set_params(&vec![0.0; n]).unwrap();
        m.biases[2][0] = 0.7;
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).unwrap(), 0.7);
        assert!(matches!(m.forward(&[1.0]), Err(FidelityError::Shape(_))));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ScorerModel::init(&[1, 1], FeatureConfig::default(), &mut rng).unwrap();
        m.set_params(&[2.5, -0.5]).unwrap();
        assert_eq!(m.forward(&[3.0]).unwrap(), 2.5 * 3.0 - 0.5);
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let model = tiny_model(3);
        let feats = [vec![0.2, -1.0, 0.5], vec![1.1, 0.3, -0.4], vec![-0.7, 0.9, 0.1]];
        let inputs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let pairs = [(0, 1), (2, 1)];
        let targets = [1.0, -1.0, 0.3];
        let cfg = LossConfig::default();
        let err = grad_check(
            |p| {
                let mut m = model.clone();
                m.set_params(p).unwrap();
                let (l, g) = batch_loss_and_param_grad(&m, &inputs, &pairs, &targets, &PearsonObjective, &cfg).unwrap();
                (l.value, g)
            },
            &model.params(),
            1e-6,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn separable_pair_is_learned() {
        let items = vec![
            TrainingItem { id: "a".into(), prompt: "p".into(), features: vec![1.0, 0.0], target: 1.0 },
            TrainingItem { id: "b".into(), prompt: "p".into(), features: vec![0.0, 1.0], target: -1.0 },
        ];
        let pairs = vec![MotionPair::new("a", "b", "p")];
        let cfg = TrainingConfig { lambda: 0.0, learning_rate: 0.5, ..TrainingConfig::default() };
        let (_, log) = train(&items, &pairs, &cfg).unwrap();
        assert!(log.epochs.last().unwrap().perceptual < 0.01, "{:?}", log.epochs.last());
    }

    #[test]
    fn undersized_group_is_rejected() {
        let items = vec![
            TrainingItem { id: "a".into(), prompt: "p".into(), features: vec![1.0], target: 1.0 },
            TrainingItem { id: "b".into(), prompt: "q".into(), features: vec![0.0], target: -1.0 },
        ];
        assert!(matches!(train(&items, &[], &TrainingConfig::default()), Err(FidelityError::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = tiny_model(9);
        let text = m.to_json().unwrap();
        let back = ScorerModel::from_json(&text, std::path::Path::new("m.json")).unwrap();
        assert_eq!(m, back);
        assert!(text.contains(MODEL_FORMAT));
    }
}
