use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{loss_and_grads, loss_only, LossWeights, Objective, SceneLabels};
use crate::config::ModelConfig;
use crate::data::{Proposal, ProposalKind};
use crate::encoder::{Image, ToyTextEncoder};
use crate::error::{ensure_arg, Result};
use crate::geometry::BBox;
use crate::model::{init_params, Network};
use crate::nn::{l2_norm, ParamId, ParameterStore};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Flips the sign of this tensor's analytic gradient, to confirm the check can fail.
    pub corrupt: Option<ParamId>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / (‖numeric‖ + 1e-8)` over the whole tensor.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub worst: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient of the scene loss against central differences
/// for every scalar parameter. With a detached local branch the local bank view is
/// frozen, so perturbing the bank only moves its global use.
pub fn gradcheck(
    cfg: &ModelConfig,
    params: &ParameterStore,
    image: &Image,
    proposals: &[Proposal],
    labels: &SceneLabels,
    objective: &Objective,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let frozen = cfg.local_detached.then(|| params.get(ParamId::Bank).to_vec());
    let local = frozen.as_deref();
    let mut analytic = params.zeros_like();
    loss_and_grads(&Network::new(params, cfg), image, proposals, labels, objective, &mut analytic, local)?;
    if let Some(id) = opts.corrupt {
        analytic.get_mut(id).iter_mut().for_each(|g| *g = -*g);
    }

    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(ParamId::ALL.len());
    for id in ParamId::ALL {
        let mut numeric = vec![0.0; params.get(id).len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.get(id)[i];
            probe.get_mut(id)[i] = orig + opts.step;
            let plus = loss_only(&Network::new(&probe, cfg), image, proposals, labels, objective, local)?.total;
            probe.get_mut(id)[i] = orig - opts.step;
            let minus = loss_only(&Network::new(&probe, cfg), image, proposals, labels, objective, local)?.total;
            probe.get_mut(id)[i] = orig;
            *slot = (plus - minus) / (2.0 * opts.step);
        }
        let diff: Vec<f64> = analytic.get(id).iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let numeric_norm = l2_norm(&numeric);
        tensors.push(TensorCheck {
            name: id.name().to_string(),
            rel_error: l2_norm(&diff) / (numeric_norm + 1e-8),
            max_abs_error: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
            numeric_norm,
        });
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("at least one tensor");
    Ok(GradcheckReport {
        worst: worst.name.clone(),
        max_rel_error: worst.rel_error,
        tolerance: opts.tolerance,
        passed: worst.rel_error < opts.tolerance,
        tensors,
    })
}

/// A random scene for gradient checking: noise pixels, two humans, one to three
/// objects, and image labels naming one combo of the first object.
pub fn random_check_scene(
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(Image, Vec<Proposal>, SceneLabels)> {
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    ensure_arg!(w >= 4.0 && h >= 4.0, "check scenes need at least 4×4 pixels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..cfg.image_width * cfg.image_height * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let image = Image::new(cfg.image_width, cfg.image_height, data)?;
    let random_box = |rng: &mut ChaCha8Rng| {
        let x1 = rng.random_range(0.0..w * 0.6);
        let y1 = rng.random_range(0.0..h * 0.6);
        let x2 = rng.random_range(x1 + w * 0.15..=w);
        let y2 = rng.random_range(y1 + h * 0.15..=h);
        BBox::new(x1, y1, x2, y2)
    };
    let mut proposals = Vec::new();
    for _ in 0..2 {
        let bbox = random_box(&mut rng)?;
        proposals.push(Proposal { bbox, kind: ProposalKind::Human, class: None, score: rng.random_range(0.5..1.0) });
    }
    for _ in 0..rng.random_range(1..=3) {
        let bbox = random_box(&mut rng)?;
        let class = rng.random_range(0..vocab.num_objects());
        proposals.push(Proposal { bbox, kind: ProposalKind::Object, class: Some(class), score: rng.random_range(0.5..1.0) });
    }
    let first = proposals[2].class.expect("object proposal");
    let (verb, hoi) = vocab
        .verbs_for_object(first)
        .next()
        .ok_or_else(|| crate::Error::invalid(format!("object {first} has no combo")))?;
    let labels = SceneLabels {
        hois: vec![hoi],
        verbs: BTreeSet::from([verb]),
        objects: BTreeSet::from([first]),
    };
    Ok((image, proposals, labels))
}

/// Settings of a multi-scene gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSuite {
    pub scenes: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub verbs: usize,
    pub objects: usize,
    pub combos: usize,
    pub weights: LossWeights,
    pub top_k: usize,
    /// Parameter name whose analytic gradient is deliberately corrupted.
    pub corrupt: Option<String>,
}

impl Default for GradcheckSuite {
    fn default() -> Self {
        Self {
            scenes: 5,
            seed: 0,
            model: ModelConfig {
                dim: 6,
                patch: 4,
                image_width: 16,
                image_height: 16,
                roi_grid: 2,
                ..Default::default()
            },
            verbs: 3,
            objects: 2,
            combos: 4,
            weights: LossWeights { reg: 1.0, ..Default::default() },
            top_k: 1,
            corrupt: None,
        }
    }
}

impl GradcheckSuite {
    /// Fresh parameters and a random scene per check; one report per scene.
    pub fn run(&self) -> Result<Vec<GradcheckReport>> {
        ensure_arg!(self.scenes >= 1, "gradient check needs at least one scene");
        let corrupt = match &self.corrupt {
            Some(name) => Some(
                ParamId::from_name(name)
                    .ok_or_else(|| crate::Error::invalid(format!("unknown parameter '{name}'")))?,
            ),
            None => None,
        };
        let vocab = Vocabulary::synthetic(self.verbs, self.objects, self.combos)?;
        let text = ToyTextEncoder::new(self.model.dim);
        let objective = Objective { weights: self.weights, top_k: self.top_k, src_active: true };
        let opts = GradcheckOptions { corrupt, ..Default::default() };
        (0..self.scenes as u64)
            .map(|i| {
                let seed = self.seed.wrapping_add(i);
                let params = init_params(&self.model, &vocab, &text, seed)?;
                let (image, proposals, labels) = random_check_scene(&self.model, &vocab, seed ^ 0x5ce0e)?;
                gradcheck(&self.model, &params, &image, &proposals, &labels, &objective, &opts)
            })
            .collect()
    }
}
