//! Detection mAP with dual-IoU greedy matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RareSplit};
use crate::error::{ensure_arg, Error, Result};
use crate::geometry::{iou, BBox};
use crate::model::DetectionRecord;
use crate::vocab::Vocabulary;

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Correct,
    /// Drops, per image, detections of classes absent from that image's ground
    /// truth before scoring. Inflates mAP; kept for comparison.
    Flawed,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(Self::Correct),
            "flawed" => Ok(Self::Flawed),
            other => Err(Error::invalid(format!("unknown protocol '{other}'"))),
        }
    }
}

/// A scored human-object box pair of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDetection {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGt {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
}

/// Indices of `dets` ordered by score descending, then image id, then input order.
pub fn rank(dets: &[ClassDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });
    order
}

/// True-positive flag for each ranked detection. A detection claims the unmatched
/// ground truth of its image with the highest `min(IoU_h, IoU_o)`, provided both
/// IoUs reach the threshold.
pub fn match_ranked(ranked: &[ClassDetection], gts: &[ClassGt]) -> Result<Vec<bool>> {
    let mut used = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(ranked.len());
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image_id != d.image_id {
                continue;
            }
            let ih = iou(&d.human_box, &gt.human_box)?;
            let io = iou(&d.object_box, &gt.object_box)?;
            if ih < IOU_THRESHOLD || io < IOU_THRESHOLD {
                continue;
            }
            let q = ih.min(io);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((g, q));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
        }
        flags.push(best.is_some());
    }
    Ok(flags)
}

/// `(recall, precision)` after each ranked detection.
pub fn pr_points(tp: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut hits = 0usize;
    tp.iter()
        .enumerate()
        .map(|(i, &t)| {
            hits += usize::from(t);
            (hits as f64 / num_gt as f64, hits as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Area under the precision envelope (all-point interpolation). `None` without ground truth.
pub fn average_precision(tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let points = pr_points(tp, num_gt);
    let mut envelope = vec![0.0; points.len()];
    let mut running: f64 = 0.0;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in points.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    Some(ap)
}

/// Ranks, matches and scores the detections of one class.
pub fn match_and_ap(dets: &[ClassDetection], gts: &[ClassGt]) -> Result<Option<f64>> {
    let ranked: Vec<ClassDetection> = rank(dets).into_iter().map(|i| dets[i]).collect();
    let tp = match_ranked(&ranked, gts)?;
    Ok(average_precision(&tp, gts.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub hoi_id: usize,
    pub ap: f64,
    pub gt_count: usize,
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    /// Classes with at least one ground-truth instance, by hoi id.
    pub per_class: Vec<ClassAp>,
    #[serde(rename = "mAP_full")]
    pub map_full: Option<f64>,
    #[serde(rename = "mAP_rare")]
    pub map_rare: Option<f64>,
    #[serde(rename = "mAP_nonrare")]
    pub map_nonrare: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores `detections` against the ground truth of `data`. Rare and non-rare means
/// follow `split`.
pub fn evaluate(
    detections: &[DetectionRecord],
    data: &Dataset,
    vocab: &Vocabulary,
    split: &RareSplit,
    protocol: Protocol,
) -> Result<EvalResult> {
    let mut gts: BTreeMap<usize, Vec<ClassGt>> = BTreeMap::new();
    let mut image_classes: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for scene in &data.scenes {
        let classes = image_classes.entry(scene.image_id).or_default();
        for g in &scene.gt_instances {
            let hoi = vocab.hoi_index(g.verb, g.object_class)?.ok_or_else(|| {
                Error::invalid(format!("image {}: ground truth is not a combo", scene.image_id))
            })?;
            classes.insert(hoi);
            gts.entry(hoi).or_default().push(ClassGt {
                image_id: scene.image_id,
                human_box: g.human_box,
                object_box: g.object_box,
            });
        }
    }

    let mut per_class_dets: BTreeMap<usize, Vec<ClassDetection>> = BTreeMap::new();
    for d in detections {
        let Some(classes) = image_classes.get(&d.image_id) else {
            return Err(Error::invalid(format!("detection for unknown image {}", d.image_id)));
        };
        ensure_arg!(
            d.verb < vocab.num_verbs() && d.object_class < vocab.num_objects(),
            "detection on image {} has an unknown verb or object class",
            d.image_id
        );
        let hoi = vocab.hoi_index(d.verb, d.object_class)?.ok_or_else(|| {
            Error::invalid(format!(
                "detection on image {}: (verb {}, object {}) is not a combo",
                d.image_id, d.verb, d.object_class
            ))
        })?;
        if protocol == Protocol::Flawed && !classes.contains(&hoi) {
            continue;
        }
        per_class_dets.entry(hoi).or_default().push(ClassDetection {
            image_id: d.image_id,
            human_box: d.human_box,
            object_box: d.object_box,
            score: d.score_r,
        });
    }

    let mut per_class = Vec::with_capacity(gts.len());
    for (&hoi, class_gts) in &gts {
        let dets = per_class_dets.remove(&hoi).unwrap_or_default();
        let ranked: Vec<ClassDetection> = rank(&dets).into_iter().map(|i| dets[i]).collect();
        let tp = match_ranked(&ranked, class_gts)?;
        let ap = average_precision(&tp, class_gts.len()).expect("class has ground truth");
        per_class.push(ClassAp {
            hoi_id: hoi,
            ap,
            gt_count: class_gts.len(),
            curve: pr_points(&tp, class_gts.len()),
        });
    }
    Ok(EvalResult {
        protocol,
        map_full: mean(per_class.iter().map(|c| c.ap)),
        map_rare: mean(per_class.iter().filter(|c| split.rare.contains(&c.hoi_id)).map(|c| c.ap)),
        map_nonrare: mean(per_class.iter().filter(|c| split.non_rare.contains(&c.hoi_id)).map(|c| c.ap)),
        per_class,
    })
}

impl EvalResult {
    pub fn table(&self, vocab: &Vocabulary) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v));
        let mut out = String::new();
        let _ = writeln!(out, "protocol: {:?}", self.protocol);
        let _ = writeln!(out, "{:>4}  {:<32} {:>6} {:>8}", "hoi", "prompt", "gt", "AP");
        for c in &self.per_class {
            let prompt = vocab.prompt(c.hoi_id).unwrap_or_default();
            let _ = writeln!(out, "{:>4}  {:<32} {:>6} {:>8.4}", c.hoi_id, prompt, c.gt_count, c.ap);
        }
        let _ = writeln!(out, "mAP full     {}", fmt(self.map_full));
        let _ = writeln!(out, "mAP rare     {}", fmt(self.map_rare));
        let _ = writeln!(out, "mAP non-rare {}", fmt(self.map_nonrare));
        out
    }

    pub fn write_pr_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "hoi_id,rank,recall,precision")?;
        for c in &self.per_class {
            for (i, (r, p)) in c.curve.iter().enumerate() {
                writeln!(out, "{},{},{},{}", c.hoi_id, i + 1, r, p)?;
            }
        }
        Ok(())
    }
}
