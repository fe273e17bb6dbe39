use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{loss_and_grads, LossBreakdown, LossWeights, Objective, SceneLabels};
use super::optim::Adam;
use crate::config::{KtnMode, ModelConfig};
use crate::data::Dataset;
use crate::encoder::Image;
use crate::error::{ensure_arg, Error, Result};
use crate::model::Network;
use crate::nn::{ParamId, ParameterStore, Tensor};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Fraction of iterations before the relatedness loss switches on.
    pub warmup_frac: f64,
    pub top_k: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 1e-3,
            lr_heads: 1e-3,
            iterations: 2000,
            batch_size: 1,
            warmup_frac: 0.2,
            top_k: 1,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.lr_backbone > 0.0 && self.lr_heads > 0.0,
            "learning rates must be positive"
        );
        ensure_arg!(self.batch_size >= 1, "batch size must be at least 1");
        ensure_arg!(self.top_k >= 1, "top-k must be at least 1");
        ensure_arg!(
            (0.0..1.0).contains(&self.warmup_frac),
            "warm-up fraction must be in [0, 1), got {}",
            self.warmup_frac
        );
        let w = self.weights;
        ensure_arg!(
            [w.global, w.pairwise, w.relatedness, w.reg].iter().all(|v| v.is_finite() && *v >= 0.0),
            "loss weights must be finite and non-negative"
        );
        Ok(())
    }

    /// First iteration with the relatedness loss active.
    pub fn warmup_iterations(&self) -> usize {
        (self.warmup_frac * self.iterations as f64).floor() as usize
    }
}

/// Model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Global branch, knowledge transfer and relatedness.
    Full,
    /// Full model without the relatedness loss or factor.
    NoSrc,
    /// Pairwise branch only: no knowledge transfer, global branch or relatedness.
    Baseline,
}

impl Ablation {
    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoSrc => {
                train.weights.relatedness = 0.0;
                model.use_relatedness = false;
            }
            Ablation::Baseline => {
                train.weights.relatedness = 0.0;
                model.use_relatedness = false;
                model.use_global = false;
                model.ktn_mode = KtnMode::Off;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

pub fn write_metrics<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,L,L_g,L_p,L_b")?;
    for r in rows {
        let l = r.loss;
        writeln!(out, "{},{},{},{},{}", r.iteration, l.total, l.global, l.pairwise, l.relatedness)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParameterStore,
    pub metrics: Vec<MetricRow>,
}

/// Learning rate of a tensor under the given configs; zero means frozen.
pub fn learning_rate(id: ParamId, model: &ModelConfig, train: &TrainConfig) -> f64 {
    if id == ParamId::Bank && !model.bank_trainable {
        0.0
    } else if id.is_backbone() {
        train.lr_backbone
    } else {
        train.lr_heads
    }
}

/// Optimizes `params` on `data` with image-level labels only. Scenes are visited in
/// a seeded shuffled order, `batch_size` scenes per iteration.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    vocab: &Vocabulary,
    data: &Dataset,
    mut params: ParameterStore,
) -> Result<TrainOutput> {
    model.validate()?;
    config.validate()?;
    ensure_arg!(!data.is_empty(), "training set is empty");
    let images: Vec<Image> = data.scenes.iter().map(|s| s.image()).collect::<Result<_>>()?;
    let labels: Vec<SceneLabels> = data
        .scenes
        .iter()
        .map(|s| SceneLabels::from_scene(s, vocab))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = Vec::new();
    let mut adam = Adam::new(&params);
    let mut metrics = Vec::with_capacity(config.iterations);
    let warmup = config.warmup_iterations();

    for iteration in 0..config.iterations {
        let objective = Objective {
            weights: config.weights,
            top_k: config.top_k,
            src_active: iteration >= warmup,
        };
        let net = Network::new(&params, model);
        let mut grads = params.zeros_like();
        let mut total = LossBreakdown::default();
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            let idx = order.pop().expect("refilled above");
            batch.push(idx);
            let scene = &data.scenes[idx];
            let loss = loss_and_grads(&net, &images[idx], &scene.proposals, &labels[idx], &objective, &mut grads, None)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    batch: idx,
                    diagnostic: format!("image {}: non-finite loss {loss:?}", scene.image_id),
                });
            }
            total.total += loss.total;
            total.global += loss.global;
            total.pairwise += loss.pairwise;
            total.relatedness += loss.relatedness;
            total.reg += loss.reg;
        }
        let scale = 1.0 / config.batch_size as f64;
        if config.batch_size > 1 {
            let mut mean = grads.zeros_like();
            mean.add_scaled(scale, &grads);
            grads = mean;
        }
        for v in [&mut total.total, &mut total.global, &mut total.pairwise, &mut total.relatedness, &mut total.reg] {
            *v *= scale;
        }
        metrics.push(MetricRow { iteration, loss: total });

        adam.step(&mut params, &grads, |id| learning_rate(id, model, config));
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Diverged {
                iteration,
                batch: batch[0],
                diagnostic: format!("parameter {name} became non-finite after the update"),
            });
        }
    }
    Ok(TrainOutput { params, metrics })
}

/// Serialized model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub iteration: usize,
    /// `(verb, object)` of every combo, in hoi-id order.
    pub vocabulary: Vec<(usize, usize)>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(model: &ModelConfig, train: &TrainConfig, iteration: usize, vocab: &Vocabulary, params: &ParameterStore) -> Self {
        Self {
            version: Self::VERSION,
            model: model.clone(),
            train: train.clone(),
            iteration,
            vocabulary: vocab.fingerprint(),
            tensors: params.tensors().to_vec(),
        }
    }

    /// Parameters checked against the model config and `vocab`.
    pub fn params(&self, vocab: &Vocabulary) -> Result<ParameterStore> {
        ensure_arg!(
            self.vocabulary == vocab.fingerprint(),
            "checkpoint was trained on a different vocabulary"
        );
        self.model.validate()?;
        let reference = self.model.zero_params(vocab.num_verbs(), vocab.num_combos());
        ParameterStore::from_tensors(self.tensors.clone(), &reference)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ensure_arg!(
            ckpt.version == Self::VERSION,
            "{}: unsupported checkpoint version {}",
            path.display(),
            ckpt.version
        );
        Ok(ckpt)
    }
}
