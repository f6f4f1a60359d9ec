use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use crate::value::{BBox, Region};

/// Scene generation bounds and vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub canvas_width: i64,
    pub canvas_height: i64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_box: i64,
    pub max_box: i64,
    /// Object categories. Lowercase words, pluralized by appending `s`.
    pub vocabulary: Vec<String>,
    /// Attribute name to its possible values.
    pub attributes: BTreeMap<String, Vec<String>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        Self {
            canvas_width: 512,
            canvas_height: 512,
            min_objects: 2,
            max_objects: 8,
            min_box: 16,
            max_box: 160,
            vocabulary: words(&["chair", "table", "mug", "dog", "cat", "car", "tree", "bottle", "lamp", "book"]),
            attributes: BTreeMap::from([
                ("color".to_string(), words(&["red", "blue", "green", "yellow", "black", "white"])),
                ("size".to_string(), words(&["small", "large"])),
            ]),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.canvas_width <= 0 || self.canvas_height <= 0 {
            return bad("canvas dimensions must be positive".into());
        }
        if self.min_objects > self.max_objects {
            return bad(format!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if self.min_box < 1 || self.min_box > self.max_box {
            return bad("box size bounds must satisfy 1 <= min_box <= max_box".into());
        }
        if self.min_box > self.canvas_width.min(self.canvas_height) {
            return bad("min_box does not fit on the canvas".into());
        }
        if self.vocabulary.is_empty() && self.max_objects > 0 {
            return bad("vocabulary is empty".into());
        }
        let word = |w: &String| !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase());
        if let Some(w) = self.vocabulary.iter().find(|w| !word(w) || w.ends_with('s')) {
            return bad(format!("vocabulary entry {w:?} must be a lowercase word not ending in 's'"));
        }
        for (name, values) in &self.attributes {
            if !word(name) || values.is_empty() || !values.iter().all(word) {
                return bad(format!("attribute {name:?} needs lowercase word values"));
            }
        }
        Ok(())
    }

    pub fn full_region(&self) -> Region {
        Region::full(self.canvas_width, self.canvas_height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub attributes: BTreeMap<String, String>,
    pub bbox: BBox,
}

/// Symbolic ground-truth world observed by the simulated tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub width: i64,
    pub height: i64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn full_region(&self) -> Region {
        Region::full(self.width, self.height)
    }

    /// Indices of objects named `name` whose center lies in `region`.
    pub fn find(&self, name: &str, region: &Region) -> Vec<usize> {
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.name == name && region.contains(&o.bbox))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_named(&self, name: &str) -> usize {
        self.objects.iter().filter(|o| o.name == name).count()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex_digest(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.objects {
            let b = &o.bbox;
            if b.left < 0 || b.top < 0 || b.right > self.width || b.bottom > self.height || b.left >= b.right || b.top >= b.bottom {
                return Err(Error::Invalid(format!("scene {}: bbox {b:?} outside canvas", self.scene_id)));
            }
        }
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws a scene; deterministic in `(seed, config)`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let count = rng.gen_range(config.min_objects..=config.max_objects);
    let max_w = config.max_box.min(config.canvas_width);
    let max_h = config.max_box.min(config.canvas_height);
    let objects = (0..count)
        .map(|_| {
            let name = config.vocabulary.choose(&mut rng).expect("non-empty vocabulary").clone();
            let attributes = config
                .attributes
                .iter()
                .map(|(k, vs)| (k.clone(), vs.choose(&mut rng).expect("non-empty values").clone()))
                .collect();
            let w = rng.gen_range(config.min_box..=max_w);
            let h = rng.gen_range(config.min_box..=max_h);
            let left = rng.gen_range(0..=config.canvas_width - w);
            let top = rng.gen_range(0..=config.canvas_height - h);
            SceneObject { name, attributes, bbox: BBox::new(left, top, left + w, top + h) }
        })
        .collect();
    Ok(Scene {
        scene_id: format!("scene-{seed}"),
        width: config.canvas_width,
        height: config.canvas_height,
        objects,
    })
}
