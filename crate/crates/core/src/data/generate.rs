use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{Dataset, GtInstance, PixelSource, Proposal, ProposalKind, SceneRecord};
use crate::error::{ensure_arg, Error, Result};
use crate::geometry::{union_box, BBox};
use crate::vocab::Vocabulary;

const PLACEMENT_TRIES: usize = 200;
const IMAGE_RESTARTS: usize = 50;

/// Parameters of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub seed: u64,
    pub images: usize,
    /// First image id; lets train and test splits use disjoint ids.
    pub first_image_id: u64,
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub verbs: usize,
    pub objects: usize,
    pub combos: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Max shift of each proposal edge, as a fraction of the box side.
    pub jitter: f64,
    pub distractors: usize,
    /// HOI class `k` is drawn with probability ∝ `(k + 1)^(-skew)`.
    pub skew: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 200,
            first_image_id: 0,
            width: 64,
            height: 64,
            patch: 8,
            verbs: 6,
            objects: 5,
            combos: 12,
            min_instances: 1,
            max_instances: 3,
            jitter: 0.1,
            distractors: 2,
            skew: 0.0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.patch > 0, "patch size must be positive");
        ensure_arg!(
            self.width.is_multiple_of(self.patch) && self.height.is_multiple_of(self.patch),
            "image size {}×{} not divisible by patch {}",
            self.width,
            self.height,
            self.patch
        );
        ensure_arg!(self.width >= 32 && self.height >= 32, "images must be at least 32×32");
        ensure_arg!(self.verbs >= 1 && self.objects >= 1, "need at least one verb and one object");
        ensure_arg!(
            (1..=self.verbs * self.objects).contains(&self.combos),
            "combo count {} must be in 1..={}",
            self.combos,
            self.verbs * self.objects
        );
        ensure_arg!(
            1 <= self.min_instances && self.min_instances <= self.max_instances,
            "instance range {}..={} is invalid",
            self.min_instances,
            self.max_instances
        );
        ensure_arg!((0.0..0.5).contains(&self.jitter), "jitter must be in [0, 0.5)");
        ensure_arg!(self.skew >= 0.0 && self.skew.is_finite(), "skew must be non-negative");
        Ok(())
    }

    /// Sampling weight of every HOI class.
    pub fn class_weights(&self) -> Vec<f64> {
        (0..self.combos).map(|k| ((k + 1) as f64).powf(-self.skew)).collect()
    }
}

/// SplitMix64 finalizer; derives independent per-image seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn image_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index)
}

/// Generates the vocabulary and `spec.images` scenes. Each image is produced from
/// its own derived seed, so output does not depend on generation order.
pub fn generate(spec: &GenSpec) -> Result<(Vocabulary, Dataset)> {
    spec.validate()?;
    let vocab = Vocabulary::synthetic(spec.verbs, spec.objects, spec.combos)?;
    let classes = WeightedIndex::new(spec.class_weights())
        .map_err(|e| Error::invalid(format!("class weights: {e}")))?;
    let scenes = (0..spec.images as u64)
        .map(|i| generate_scene(spec, &vocab, &classes, spec.first_image_id + i, image_seed(spec.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab, Dataset::new(scenes)))
}

fn generate_scene(
    spec: &GenSpec,
    vocab: &Vocabulary,
    classes: &WeightedIndex<f64>,
    image_id: u64,
    seed: u64,
) -> Result<SceneRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut instances = None;
    for _ in 0..IMAGE_RESTARTS {
        let count = rng.random_range(spec.min_instances..=spec.max_instances);
        if let Some(found) = place_instances(&mut rng, vocab, classes, count, w, h)? {
            instances = Some(found);
            break;
        }
    }
    let instances = instances.ok_or_else(|| {
        Error::Generation(format!(
            "could not place instances in image {image_id} after {IMAGE_RESTARTS} attempts"
        ))
    })?;

    let mut proposals = Vec::with_capacity(2 * instances.len() + spec.distractors);
    for g in &instances {
        proposals.push(Proposal {
            bbox: jitter(&mut rng, &g.human_box, spec.jitter, w, h)?,
            kind: ProposalKind::Human,
            class: None,
            score: rng.random_range(0.7..=1.0),
        });
        proposals.push(Proposal {
            bbox: jitter(&mut rng, &g.object_box, spec.jitter, w, h)?,
            kind: ProposalKind::Object,
            class: Some(g.object_class),
            score: rng.random_range(0.7..=1.0),
        });
    }
    for _ in 0..spec.distractors {
        let bw = rng.random_range(6.0..16.0_f64).round();
        let bh = rng.random_range(6.0..16.0_f64).round();
        let x1 = rng.random_range(0.0..w - bw).round();
        let y1 = rng.random_range(0.0..h - bh).round();
        let human = rng.random_bool(0.5);
        proposals.push(Proposal {
            bbox: BBox::new(x1, y1, x1 + bw, y1 + bh)?,
            kind: if human { ProposalKind::Human } else { ProposalKind::Object },
            class: if human { None } else { Some(rng.random_range(0..vocab.num_objects())) },
            score: rng.random_range(0.1..=0.5),
        });
    }
    proposals.shuffle(&mut rng);

    let mut labels: Vec<usize> = instances
        .iter()
        .map(|g| vocab.hoi_index(g.verb, g.object_class).map(|h| h.expect("sampled from combos")))
        .collect::<Result<_>>()?;
    labels.sort_unstable();
    labels.dedup();

    Ok(SceneRecord {
        image_id,
        width: spec.width,
        height: spec.height,
        pixels: PixelSource::Seed(rng.random()),
        proposals,
        image_labels: labels,
        gt_instances: instances,
    })
}

/// Places `count` human/object pairs whose union boxes do not touch. Returns
/// `None` when some instance could not be placed.
fn place_instances(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    classes: &WeightedIndex<f64>,
    count: usize,
    w: f64,
    h: f64,
) -> Result<Option<Vec<GtInstance>>> {
    let mut placed: Vec<GtInstance> = Vec::with_capacity(count);
    let mut unions: Vec<BBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let combo = vocab.combo(classes.sample(rng))?;
        let mut ok = false;
        for _ in 0..PLACEMENT_TRIES {
            let hw = rng.random_range(8..=11) as f64;
            let hh = rng.random_range(13..=18) as f64;
            let ow = rng.random_range(7..=11) as f64;
            let oh = rng.random_range(7..=11) as f64;
            let gap = rng.random_range(6..=12) as f64;
            let object_right = rng.random_bool(0.5);
            let span = hw + gap + ow;
            if span >= w || hh >= h {
                continue;
            }
            let left = rng.random_range(0..=(w - span) as usize) as f64;
            let top = rng.random_range(0..=(h - hh) as usize) as f64;
            let (hx, ox) = if object_right { (left, left + hw + gap) } else { (left + ow + gap, left) };
            let oy = (top + rng.random_range(0..=(hh - oh) as usize) as f64).min(h - oh);
            let human_box = BBox::new(hx, top, hx + hw, top + hh)?;
            let object_box = BBox::new(ox, oy, ox + ow, oy + oh)?;
            let u = union_box(&human_box, &object_box)?;
            let clear = unions.iter().all(|o| {
                u.x2 + 1.0 <= o.x1 || o.x2 + 1.0 <= u.x1 || u.y2 + 1.0 <= o.y1 || o.y2 + 1.0 <= u.y1
            });
            if clear {
                unions.push(u);
                placed.push(GtInstance {
                    human_box,
                    object_box,
                    object_class: combo.object_id,
                    verb: combo.verb_id,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Ok(None);
        }
    }
    Ok(Some(placed))
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, magnitude: f64, w: f64, h: f64) -> Result<BBox> {
    let (bw, bh) = (b.width(), b.height());
    let mut shift = |s: f64| if magnitude > 0.0 { rng.random_range(-magnitude..=magnitude) * s } else { 0.0 };
    let x1 = b.x1 + shift(bw);
    let y1 = b.y1 + shift(bh);
    let x2 = b.x2 + shift(bw);
    let y2 = b.y2 + shift(bh);
    BBox::new(x1, y1, x2, y2)?.clamp_to(w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn zero_distractors_gives_two_proposals_per_instance() {
        let spec = GenSpec { images: 40, distractors: 0, seed: 1, ..Default::default() };
        let (_, d) = generate(&spec).unwrap();
        for s in &d.scenes {
            assert_eq!(s.proposals.len(), 2 * s.gt_instances.len());
            assert!((1..=3).contains(&s.gt_instances.len()));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GenSpec { images: 30, seed: 77, ..Default::default() };
        let bytes = |spec: &GenSpec| {
            let mut buf = Vec::new();
            generate(spec).unwrap().1.write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&spec), bytes(&spec));
        let other = GenSpec { seed: 78, ..spec.clone() };
        assert_ne!(bytes(&spec), bytes(&other));
        let (_, d) = generate(&spec).unwrap();
        let a = d.scenes[3].image().unwrap();
        let b = d.scenes[3].image().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_and_boxes_are_in_range() {
        let spec = GenSpec { images: 60, seed: 5, distractors: 3, ..Default::default() };
        let (v, d) = generate(&spec).unwrap();
        d.validate(&v).unwrap();
        for s in &d.scenes {
            let n_gt = 2 * s.gt_instances.len();
            let high = s.proposals.iter().filter(|p| p.score >= 0.7).count();
            let low = s.proposals.iter().filter(|p| p.score <= 0.5).count();
            assert_eq!((high, low), (n_gt, 3));
            assert!(s.proposals.iter().all(|p| p.bbox.within(64.0, 64.0)));
        }
    }

    #[test]
    fn jittered_proposals_overlap_their_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x1 = rng.random_range(0.0..40.0);
            let y1 = rng.random_range(0.0..40.0);
            let b = BBox::new(x1, y1, x1 + rng.random_range(4.0..24.0), y1 + rng.random_range(4.0..24.0)).unwrap();
            let j = jitter(&mut rng, &b, 0.1, 64.0, 64.0).unwrap();
            assert!(iou(&b, &j).unwrap() >= 0.5);
        }
    }

    #[test]
    fn infeasible_spec_is_a_generation_error() {
        let spec = GenSpec { images: 1, width: 32, height: 32, min_instances: 12, max_instances: 12, ..Default::default() };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
        assert!(GenSpec { width: 60, ..Default::default() }.validate().is_err());
        assert!(GenSpec { combos: 31, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn class_histogram_follows_power_law() {
        let spec = GenSpec { images: 500, seed: 21, skew: 1.0, ..Default::default() };
        let (v, d) = generate(&spec).unwrap();
        let mut counts = vec![0.0; v.num_combos()];
        for g in d.scenes.iter().flat_map(|s| &s.gt_instances) {
            counts[v.hoi_index(g.verb, g.object_class).unwrap().unwrap()] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let weights = spec.class_weights();
        let wsum: f64 = weights.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(o, w)| {
                let e = total * w / wsum;
                (o - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new((v.num_combos() - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
        assert!(counts[0] > 3.0 * counts[11]);
    }
}
