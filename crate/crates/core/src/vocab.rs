//! HOI label space: verbs, object classes and the valid (verb, object) combinations.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};

pub const DEFAULT_RARE_THRESHOLD: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub id: usize,
    pub name: String,
    /// Present participle used in prompts ("riding", "sitting on").
    pub gerund: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub id: usize,
    pub name: String,
}

/// Semantic role of the object in a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Object,
    Instrument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combo {
    pub hoi_id: usize,
    pub verb_id: usize,
    pub object_id: usize,
    #[serde(default)]
    pub role: Role,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyFile {
    verbs: Vec<Verb>,
    objects: Vec<ObjectClass>,
    combos: Vec<Combo>,
    #[serde(default = "default_rare_threshold")]
    rare_threshold: usize,
}

fn default_rare_threshold() -> usize {
    DEFAULT_RARE_THRESHOLD
}

/// Validated vocabulary. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    verbs: Vec<Verb>,
    objects: Vec<ObjectClass>,
    combos: Vec<Combo>,
    rare_threshold: usize,
    index: HashMap<(usize, usize), usize>,
}

impl Vocabulary {
    pub fn new(
        verbs: Vec<Verb>,
        objects: Vec<ObjectClass>,
        mut combos: Vec<Combo>,
        rare_threshold: usize,
    ) -> Result<Self> {
        ensure_arg!(!verbs.is_empty(), "vocabulary needs at least one verb");
        ensure_arg!(!objects.is_empty(), "vocabulary needs at least one object");
        ensure_arg!(!combos.is_empty(), "vocabulary needs at least one combo");
        for (i, v) in verbs.iter().enumerate() {
            ensure_arg!(v.id == i, "verb ids must be 0..A-1 in order, found {} at {}", v.id, i);
            ensure_arg!(!v.gerund.trim().is_empty(), "verb {} has an empty gerund", v.name);
        }
        for (i, o) in objects.iter().enumerate() {
            ensure_arg!(o.id == i, "object ids must be 0..C-1 in order, found {} at {}", o.id, i);
            ensure_arg!(!o.name.trim().is_empty(), "object {} has an empty name", o.id);
        }
        combos.sort_by_key(|c| c.hoi_id);
        let mut index = HashMap::with_capacity(combos.len());
        for (i, c) in combos.iter().enumerate() {
            ensure_arg!(c.hoi_id == i, "hoi ids must be 0..N-1 without gaps, missing {}", i);
            ensure_arg!(c.verb_id < verbs.len(), "combo {} references unknown verb {}", i, c.verb_id);
            ensure_arg!(
                c.object_id < objects.len(),
                "combo {} references unknown object {}",
                i,
                c.object_id
            );
            if index.insert((c.verb_id, c.object_id), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate combo (verb {}, object {})",
                    c.verb_id, c.object_id
                )));
            }
        }
        Ok(Self {
            verbs,
            objects,
            combos,
            rare_threshold,
            index,
        })
    }

    /// Deterministic toy vocabulary with `num_verbs` verbs, `num_objects` objects and
    /// `num_combos` combos laid out along diagonals of the verb/object grid, so every
    /// object gets at least one verb once `num_combos >= num_objects`.
    pub fn synthetic(num_verbs: usize, num_objects: usize, num_combos: usize) -> Result<Self> {
        ensure_arg!(num_verbs >= 1 && num_objects >= 1, "need at least one verb and one object");
        ensure_arg!(
            (1..=num_verbs * num_objects).contains(&num_combos),
            "combo count {} must be in 1..={}",
            num_combos,
            num_verbs * num_objects
        );
        let verbs = (0..num_verbs)
            .map(|id| {
                let (name, gerund) = match VERB_NAMES.get(id) {
                    Some(&(n, g)) => (n.to_string(), g.to_string()),
                    None => (format!("act{id}"), format!("acting{id}")),
                };
                Verb { id, name, gerund }
            })
            .collect();
        let objects = (0..num_objects)
            .map(|id| ObjectClass {
                id,
                name: OBJECT_NAMES
                    .get(id)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("thing{id}")),
            })
            .collect();
        let mut combos = Vec::with_capacity(num_combos);
        let mut seen = std::collections::HashSet::new();
        'outer: for diagonal in 0..num_verbs {
            for object_id in 0..num_objects {
                if combos.len() == num_combos {
                    break 'outer;
                }
                let verb_id = (object_id + diagonal) % num_verbs;
                if seen.insert((verb_id, object_id)) {
                    combos.push(Combo {
                        hoi_id: combos.len(),
                        verb_id,
                        object_id,
                        role: Role::Object,
                    });
                }
            }
        }
        Self::new(verbs, objects, combos, DEFAULT_RARE_THRESHOLD)
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_combos(&self) -> usize {
        self.combos.len()
    }

    pub fn rare_threshold(&self) -> usize {
        self.rare_threshold
    }

    pub fn verbs(&self) -> &[Verb] {
        &self.verbs
    }

    pub fn objects(&self) -> &[ObjectClass] {
        &self.objects
    }

    pub fn combos(&self) -> &[Combo] {
        &self.combos
    }

    pub fn combo(&self, hoi_id: usize) -> Result<&Combo> {
        self.combos
            .get(hoi_id)
            .ok_or_else(|| Error::invalid(format!("unknown hoi id {hoi_id}")))
    }

    /// Looks up the hoi id of a (verb, object) pair. `Ok(None)` means the pair is
    /// in range but not a valid combination.
    pub fn hoi_index(&self, verb_id: usize, object_id: usize) -> Result<Option<usize>> {
        ensure_arg!(verb_id < self.verbs.len(), "verb id {} out of range", verb_id);
        ensure_arg!(object_id < self.objects.len(), "object id {} out of range", object_id);
        Ok(self.index.get(&(verb_id, object_id)).copied())
    }

    /// Verbs that form a valid combo with `object_id`, with the matching hoi ids.
    pub fn verbs_for_object(&self, object_id: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.combos
            .iter()
            .filter(move |c| c.object_id == object_id)
            .map(|c| (c.verb_id, c.hoi_id))
    }

    /// Text prompt for a combo, using its stored role.
    pub fn prompt(&self, hoi_id: usize) -> Result<String> {
        let combo = self.combo(hoi_id)?;
        self.make_prompt(combo.verb_id, combo.object_id, combo.role)
    }

    /// Builds "a person <gerund> a/an <object>" (object role) or
    /// "a person <gerund> with <object>" (instrument role).
    pub fn make_prompt(&self, verb_id: usize, object_id: usize, role: Role) -> Result<String> {
        if self.hoi_index(verb_id, object_id)?.is_none() {
            return Err(Error::invalid(format!(
                "(verb {verb_id}, object {object_id}) is not a vocabulary combo"
            )));
        }
        let gerund = &self.verbs[verb_id].gerund;
        let object = &self.objects[object_id].name;
        Ok(match role {
            Role::Object => format!("a person {gerund} {} {object}", article(object)),
            Role::Instrument => format!("a person {gerund} with {object}"),
        })
    }

    /// Stable fingerprint of the label space; checkpoints use it to detect mismatches.
    pub fn fingerprint(&self) -> Vec<(usize, usize)> {
        self.combos.iter().map(|c| (c.verb_id, c.object_id)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        Self::new(file.verbs, file.objects, file.combos, file.rare_threshold)
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            verbs: self.verbs.clone(),
            objects: self.objects.clone(),
            combos: self.combos.clone(),
            rare_threshold: self.rare_threshold,
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

// Naive: looks only at the first letter.
fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

const VERB_NAMES: &[(&str, &str)] = &[
    ("ride", "riding"),
    ("hold", "holding"),
    ("eat", "eating"),
    ("cut", "cutting"),
    ("carry", "carrying"),
    ("kick", "kicking"),
    ("throw", "throwing"),
    ("push", "pushing"),
    ("wash", "washing"),
    ("sit_on", "sitting on"),
];

const OBJECT_NAMES: &[&str] = &[
    "bicycle", "apple", "knife", "ball", "umbrella", "car", "horse", "cup", "orange", "bench",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocabulary {
        let verbs = vec![
            Verb { id: 0, name: "drive".into(), gerund: "driving".into() },
            Verb { id: 1, name: "eat".into(), gerund: "eating".into() },
            Verb { id: 2, name: "cut".into(), gerund: "cutting".into() },
        ];
        let objects = vec![
            ObjectClass { id: 0, name: "car".into() },
            ObjectClass { id: 1, name: "apple".into() },
            ObjectClass { id: 2, name: "knife".into() },
        ];
        let combos = vec![
            Combo { hoi_id: 0, verb_id: 0, object_id: 0, role: Role::Object },
            Combo { hoi_id: 1, verb_id: 1, object_id: 1, role: Role::Object },
            Combo { hoi_id: 2, verb_id: 2, object_id: 2, role: Role::Instrument },
        ];
        Vocabulary::new(verbs, objects, combos, 10).unwrap()
    }

    #[test]
    fn prompts_follow_templates() {
        let v = small();
        assert_eq!(v.make_prompt(0, 0, Role::Object).unwrap(), "a person driving a car");
        assert_eq!(v.make_prompt(1, 1, Role::Object).unwrap(), "a person eating an apple");
        assert_eq!(v.make_prompt(2, 2, Role::Instrument).unwrap(), "a person cutting with knife");
        assert_eq!(v.prompt(2).unwrap(), "a person cutting with knife");
    }

    #[test]
    fn prompt_for_unknown_combo_fails() {
        let v = small();
        assert!(matches!(v.make_prompt(0, 1, Role::Object), Err(Error::InvalidArgument(_))));
        assert!(v.make_prompt(7, 0, Role::Object).is_err());
    }

    #[test]
    fn hoi_index_round_trips() {
        let v = small();
        for c in v.combos() {
            let id = v.hoi_index(c.verb_id, c.object_id).unwrap().unwrap();
            assert_eq!(id, c.hoi_id);
            let back = v.combo(id).unwrap();
            assert_eq!((back.verb_id, back.object_id), (c.verb_id, c.object_id));
        }
        assert_eq!(v.hoi_index(0, 2).unwrap(), None);
        assert!(v.hoi_index(3, 0).is_err());
        assert!(v.hoi_index(0, 3).is_err());
    }

    #[test]
    fn single_combo_vocabulary() {
        let v = Vocabulary::synthetic(1, 1, 1).unwrap();
        assert_eq!(v.hoi_index(0, 0).unwrap(), Some(0));
    }

    #[test]
    fn rejects_duplicates_and_gaps() {
        let v = small();
        let mut combos = v.combos().to_vec();
        combos[1] = Combo { hoi_id: 1, verb_id: 0, object_id: 0, role: Role::Object };
        assert!(Vocabulary::new(v.verbs().to_vec(), v.objects().to_vec(), combos, 10).is_err());
        let mut combos = v.combos().to_vec();
        combos[2].hoi_id = 5;
        assert!(Vocabulary::new(v.verbs().to_vec(), v.objects().to_vec(), combos, 10).is_err());
        assert!(Vocabulary::new(vec![], v.objects().to_vec(), vec![], 10).is_err());
    }

    #[test]
    fn synthetic_vocabularies_are_valid() {
        for a in 1..7 {
            for c in 1..6 {
                for n in 1..=a * c {
                    let v = Vocabulary::synthetic(a, c, n).unwrap();
                    assert_eq!(v.num_combos(), n);
                }
            }
        }
        let v = Vocabulary::synthetic(6, 5, 12).unwrap();
        for o in 0..5 {
            assert!(v.verbs_for_object(o).count() >= 2);
        }
    }

    #[test]
    fn json_round_trip() {
        let v = small();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        let text = r#"{"verbs":[{"id":0,"name":"ride","gerund":"riding"}],
            "objects":[{"id":0,"name":"horse"}],
            "combos":[{"hoi_id":0,"verb_id":0,"object_id":0,"role":"object"}]}"#;
        let v = Vocabulary::from_json(text).unwrap();
        assert_eq!(v.rare_threshold(), DEFAULT_RARE_THRESHOLD);
        assert_eq!(v.prompt(0).unwrap(), "a person riding a horse");
    }
}
