use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::loss::{loss_global, loss_mean_pool, loss_pairwise, loss_relatedness};
use super::pseudo::{pseudo_labels, PseudoLabels};
use crate::data::{Proposal, SceneRecord};
use crate::encoder::Image;
use crate::error::Result;
use crate::model::{aggregate_scores, Network, OutputGrads, SceneForward};
use crate::nn::ParameterStore;
use crate::vocab::Vocabulary;

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub global: f64,
    pub pairwise: f64,
    pub relatedness: f64,
    /// Mean-pooled pair feature regression onto the global feature; off by default.
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            global: 1.0,
            pairwise: 1.0,
            relatedness: 1.0,
            reg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub global: f64,
    pub pairwise: f64,
    pub relatedness: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.global, self.pairwise, self.relatedness, self.reg]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Image-level supervision of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneLabels {
    pub hois: Vec<usize>,
    pub verbs: BTreeSet<usize>,
    pub objects: BTreeSet<usize>,
}

impl SceneLabels {
    pub fn from_scene(scene: &SceneRecord, vocab: &Vocabulary) -> Result<Self> {
        let hois: BTreeSet<usize> = scene.image_labels.iter().copied().collect();
        Ok(Self {
            hois: hois.into_iter().collect(),
            verbs: scene.label_verbs(vocab)?,
            objects: scene.label_objects(vocab)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub top_k: usize,
    /// Whether the relatedness term is past its warm-up.
    pub src_active: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            top_k: 1,
            src_active: true,
        }
    }
}

/// Loss of a forward pass and the gradients on the network outputs.
pub fn scene_objective(
    net: &Network<'_>,
    fwd: &SceneForward,
    labels: &SceneLabels,
    objective: &Objective,
) -> Result<(LossBreakdown, OutputGrads, Option<PseudoLabels>)> {
    let w = objective.weights;
    let mut up = OutputGrads::zeros(fwd);
    let mut out = LossBreakdown::default();

    if net.cfg.use_global && w.global != 0.0 {
        let (l, g) = loss_global(&fwd.s_g, &labels.hois)?;
        out.global = l;
        up.s_g = g.into_iter().map(|v| w.global * v).collect();
    }

    let mut pseudo = None;
    if !fwd.pairs.is_empty() {
        let bag = fwd.bag();
        let (agg, arg) = aggregate_scores(&bag).expect("bag is nonempty");
        let verbs: Vec<usize> = labels.verbs.iter().copied().collect();
        let (l, g) = loss_pairwise(&agg, &verbs)?;
        out.pairwise = l;
        for (a, (&m, gv)) in arg.iter().zip(g).enumerate() {
            up.s_p[m][a] = w.pairwise * gv;
        }

        if w.relatedness != 0.0 {
            let classes: Vec<usize> = fwd.pairs.iter().map(|p| p.pair.object_class).collect();
            let p = pseudo_labels(&bag, &classes, &labels.objects, &labels.verbs, objective.top_k)?;
            let s_b: Vec<f64> = fwd.pairs.iter().map(|p| p.s_b).collect();
            let (l, g) = loss_relatedness(&s_b, &p.labels, objective.src_active)?;
            out.relatedness = l;
            up.s_b = g.into_iter().map(|v| w.relatedness * v).collect();
            pseudo = Some(p);
        }

        if w.reg != 0.0 {
            let v_p: Vec<Vec<f64>> = fwd.pairs.iter().map(|p| p.v_p.clone()).collect();
            let (l, d_pair, d_global) = loss_mean_pool(&v_p, &fwd.v_g)?;
            out.reg = l;
            for row in &mut up.v_p {
                row.iter_mut().zip(&d_pair).for_each(|(r, d)| *r = w.reg * d);
            }
            up.v_g = d_global.into_iter().map(|v| w.reg * v).collect();
        }
    }

    let global = if net.cfg.use_global { w.global * out.global } else { 0.0 };
    out.total = global + w.pairwise * out.pairwise + w.relatedness * out.relatedness + w.reg * out.reg;
    Ok((out, up, pseudo))
}

/// Forward, loss and backward for one scene; gradients are added into `grads`.
pub fn loss_and_grads(
    net: &Network<'_>,
    image: &Image,
    proposals: &[Proposal],
    labels: &SceneLabels,
    objective: &Objective,
    grads: &mut ParameterStore,
    local_bank: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let fwd = net.forward(image, proposals, local_bank)?;
    let (loss, up, _) = scene_objective(net, &fwd, labels, objective)?;
    if loss.is_finite() {
        net.backward(image, &fwd, &up, grads, local_bank);
    }
    Ok(loss)
}

/// Loss only, for finite differences.
pub fn loss_only(
    net: &Network<'_>,
    image: &Image,
    proposals: &[Proposal],
    labels: &SceneLabels,
    objective: &Objective,
    local_bank: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let fwd = net.forward(image, proposals, local_bank)?;
    Ok(scene_objective(net, &fwd, labels, objective)?.0)
}
