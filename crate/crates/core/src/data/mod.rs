//! Scene records, the synthetic scene generator and JSON-lines dataset files.

mod generate;
mod render;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Image;
use crate::error::{ensure_arg, Error, Result};
use crate::geometry::BBox;
use crate::vocab::Vocabulary;

pub use generate::{generate, GenSpec};
pub use render::{render_scene, verb_pattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Human,
    Object,
}

/// A detector output. Humans carry no class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub kind: ProposalKind,
    pub class: Option<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_class: usize,
    pub verb: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum PixelSource {
    /// Re-rendered from the ground-truth layout with this noise seed.
    Seed(u64),
    /// RGB image file on disk.
    Path(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: u64,
    pub width: usize,
    pub height: usize,
    pub pixels: PixelSource,
    pub proposals: Vec<Proposal>,
    pub image_labels: Vec<usize>,
    /// Evaluation only; training reads `image_labels`.
    pub gt_instances: Vec<GtInstance>,
}

impl SceneRecord {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        ensure_arg!(self.width > 0 && self.height > 0, "image {} has zero size", self.image_id);
        for l in &self.image_labels {
            ensure_arg!(*l < vocab.num_combos(), "image {}: unknown hoi id {}", self.image_id, l);
        }
        for p in &self.proposals {
            ensure_arg!(
                (0.0..=1.0).contains(&p.score),
                "image {}: proposal score {} outside [0, 1]",
                self.image_id,
                p.score
            );
            match (p.kind, p.class) {
                (ProposalKind::Object, Some(c)) => ensure_arg!(
                    c < vocab.num_objects(),
                    "image {}: unknown object class {}",
                    self.image_id,
                    c
                ),
                (ProposalKind::Object, None) => {
                    return Err(Error::invalid(format!(
                        "image {}: object proposal without a class",
                        self.image_id
                    )))
                }
                (ProposalKind::Human, _) => {}
            }
        }
        for g in &self.gt_instances {
            ensure_arg!(
                g.human_box.within(w, h) && g.object_box.within(w, h),
                "image {}: ground-truth box outside the image",
                self.image_id
            );
            ensure_arg!(
                vocab.hoi_index(g.verb, g.object_class)?.is_some(),
                "image {}: ground truth (verb {}, object {}) is not a combo",
                self.image_id,
                g.verb,
                g.object_class
            );
        }
        Ok(())
    }

    pub fn image(&self) -> Result<Image> {
        match &self.pixels {
            PixelSource::Seed(seed) => render_scene(self.width, self.height, &self.gt_instances, *seed),
            PixelSource::Path(path) => load_image(path, self.width, self.height),
        }
    }

    /// Object classes present in the image labels.
    pub fn label_objects(&self, vocab: &Vocabulary) -> Result<BTreeSet<usize>> {
        self.image_labels
            .iter()
            .map(|&h| vocab.combo(h).map(|c| c.object_id))
            .collect()
    }

    /// Verbs present in the image labels.
    pub fn label_verbs(&self, vocab: &Vocabulary) -> Result<BTreeSet<usize>> {
        self.image_labels
            .iter()
            .map(|&h| vocab.combo(h).map(|c| c.verb_id))
            .collect()
    }
}

fn load_image(path: &str, width: usize, height: usize) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    ensure_arg!(
        rgb.width() as usize == width && rgb.height() as usize == height,
        "{path}: image is {}×{}, record says {width}×{height}",
        rgb.width(),
        rgb.height()
    );
    let data = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Image::new(width, height, data)
}

/// Ordered collection of scenes; serialized one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    pub fn new(scenes: Vec<SceneRecord>) -> Self {
        Self { scenes }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        self.scenes.iter().try_for_each(|s| s.validate(vocab))
    }

    pub fn scene(&self, image_id: u64) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.image_id == image_id)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.scenes {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file), path)
    }

    /// Parses JSON lines; blank lines are skipped, errors name the 1-based line.
    pub fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut scenes = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let scene = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            scenes.push(scene);
        }
        Ok(Self { scenes })
    }
}

/// HOI classes with fewer than `rare_threshold` training instances are rare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RareSplit {
    pub rare: BTreeSet<usize>,
    pub non_rare: BTreeSet<usize>,
    pub counts: Vec<usize>,
}

pub fn rare_split(train: &Dataset, vocab: &Vocabulary) -> Result<RareSplit> {
    let mut counts = vec![0usize; vocab.num_combos()];
    for s in &train.scenes {
        for g in &s.gt_instances {
            if let Some(h) = vocab.hoi_index(g.verb, g.object_class)? {
                counts[h] += 1;
            }
        }
    }
    let (rare, non_rare) = (0..counts.len()).partition(|&h| counts[h] < vocab.rare_threshold());
    Ok(RareSplit {
        rare,
        non_rare,
        counts,
    })
}
