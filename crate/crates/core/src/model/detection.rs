use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Network, SceneForward};
use super::ops::{fuse, normalize_pairs, FusedScore};
use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{cosine, ParamId};
use crate::vocab::Vocabulary;

/// How pair scores are turned into detection scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// Global, pairwise and relatedness factors.
    #[default]
    Full,
    /// Cosine similarity between the union feature and the combo's bank row,
    /// mapped to `[0, 1]`.
    BankSimilarity,
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "bank-similarity" | "bank_similarity" => Ok(Self::BankSimilarity),
            other => Err(Error::invalid(format!("unknown inference mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub pair_index: usize,
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_class: usize,
    pub verb: usize,
    pub hoi_id: usize,
    pub s_h: f64,
    pub s_o: f64,
    pub fused: FusedScore,
}

impl Detection {
    pub fn score(&self) -> f64 {
        self.fused.score
    }

    pub fn record(&self) -> DetectionRecord {
        DetectionRecord {
            image_id: self.image_id,
            human_box: self.human_box,
            object_box: self.object_box,
            object_class: self.object_class,
            verb: self.verb,
            score_r: self.fused.score,
            score_components: ScoreComponents {
                global: self.fused.global,
                pair: self.fused.pair,
                relatedness: self.fused.relatedness,
                det: self.fused.det,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub global: f64,
    pub pair: f64,
    pub relatedness: f64,
    pub det: f64,
}

/// One line of the detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_class: usize,
    pub verb: usize,
    #[serde(rename = "score_R")]
    pub score_r: f64,
    pub score_components: ScoreComponents,
}

pub fn write_detections<W: Write>(detections: &[Detection], mut out: W) -> Result<()> {
    for d in detections {
        serde_json::to_writer(&mut out, &d.record())?;
        out.write_all(b"\n").map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

/// Scores every pair of a forward pass. Sorted by `R` descending; equal scores keep
/// pair-then-verb order.
pub fn detections_from_forward(
    net: &Network<'_>,
    vocab: &Vocabulary,
    scene: &SceneRecord,
    fwd: &SceneForward,
    mode: InferenceMode,
) -> Result<Vec<Detection>> {
    if fwd.pairs.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = net.cfg;
    let (_, e_p) = normalize_pairs(&fwd.bag())?;
    let bank = net.params.get(ParamId::Bank);
    let d = cfg.dim;
    let mut out = Vec::new();
    for (m, pf) in fwd.pairs.iter().enumerate() {
        let hp = &scene.proposals[pf.pair.human];
        let op = &scene.proposals[pf.pair.object];
        for (verb, hoi) in vocab.verbs_for_object(pf.pair.object_class) {
            let fused = match mode {
                InferenceMode::Full => fuse(
                    cfg.use_global.then_some(fwd.s_g[hoi]),
                    e_p[m][verb],
                    cfg.use_relatedness.then_some(pf.s_b),
                    hp.score,
                    op.score,
                    cfg.gamma,
                ),
                InferenceMode::BankSimilarity => {
                    let row = &bank[hoi * d..(hoi + 1) * d];
                    let sim = (1.0 + cosine(&pf.v_u, row)) / 2.0;
                    fuse(None, sim.clamp(0.0, 1.0), None, hp.score, op.score, cfg.gamma)
                }
            };
            out.push(Detection {
                image_id: scene.image_id,
                pair_index: m,
                human_box: hp.bbox,
                object_box: op.bbox,
                object_class: pf.pair.object_class,
                verb,
                hoi_id: hoi,
                s_h: hp.score,
                s_o: op.score,
                fused,
            });
        }
    }
    out.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(out)
}

/// Runs the full pipeline on one scene.
pub fn detect(
    net: &Network<'_>,
    vocab: &Vocabulary,
    scene: &SceneRecord,
    mode: InferenceMode,
) -> Result<Vec<Detection>> {
    let image = scene.image()?;
    let fwd = net.forward(&image, &scene.proposals, None)?;
    detections_from_forward(net, vocab, scene, &fwd, mode)
}
