//! Structured queries over scenes: text templates, parsing back from text,
//! ground-truth answers and task generation.

use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::model::Task;
use crate::seed;
use crate::value::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Existence,
    Counting,
    Attribute,
    Spatial,
    Compare,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] =
        [TaskKind::Existence, TaskKind::Counting, TaskKind::Attribute, TaskKind::Spatial, TaskKind::Compare];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Existence => "existence",
            TaskKind::Counting => "counting",
            TaskKind::Attribute => "attribute",
            TaskKind::Spatial => "spatial",
            TaskKind::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Above, Relation::Below];

    fn phrase(self) -> &'static str {
        match self {
            Relation::Left => "to the left of",
            Relation::Right => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Part of `within` on this side of a reference box center. Ties on the
    /// center line count as left/above.
    pub fn crop(self, within: &Region, center2: (i64, i64)) -> Region {
        let (cx, cy) = center2;
        let mut r = *within;
        match self {
            Relation::Left => r.x1 = r.x1.min(cx),
            Relation::Right => r.x0 = r.x0.max(cx + 1),
            Relation::Above => r.y1 = r.y1.min(cy),
            Relation::Below => r.y0 = r.y0.max(cy + 1),
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Exists { name: String },
    Count { name: String },
    Attribute { attribute: String, name: String },
    Spatial { name: String, relation: Relation, reference: String },
    Compare { more: String, fewer: String },
}

impl Query {
    pub fn kind(&self) -> TaskKind {
        match self {
            Query::Exists { .. } => TaskKind::Existence,
            Query::Count { .. } => TaskKind::Counting,
            Query::Attribute { .. } => TaskKind::Attribute,
            Query::Spatial { .. } => TaskKind::Spatial,
            Query::Compare { .. } => TaskKind::Compare,
        }
    }

    /// Inverse of the text templates; `None` for free-form questions.
    pub fn parse(text: &str) -> Option<Query> {
        static PATTERNS: OnceLock<[Regex; 5]> = OnceLock::new();
        let [exists, count, attribute, spatial, compare] = PATTERNS.get_or_init(|| {
            [
                Regex::new(r"^Is there a ([a-z]+)\?$").unwrap(),
                Regex::new(r"^How many ([a-z]+)s are there\?$").unwrap(),
                Regex::new(r"^What ([a-z]+) is the ([a-z]+)\?$").unwrap(),
                Regex::new(r"^Is there a ([a-z]+) (to the left of|to the right of|above|below) the ([a-z]+)\?$")
                    .unwrap(),
                Regex::new(r"^Are there more ([a-z]+)s than ([a-z]+)s\?$").unwrap(),
            ]
        });
        let text = text.trim();
        let s = |c: &regex::Captures<'_>, i: usize| c[i].to_string();
        if let Some(c) = spatial.captures(text) {
            let relation = *Relation::ALL.iter().find(|r| r.phrase() == &c[2])?;
            return Some(Query::Spatial { name: s(&c, 1), relation, reference: s(&c, 3) });
        }
        if let Some(c) = exists.captures(text) {
            return Some(Query::Exists { name: s(&c, 1) });
        }
        if let Some(c) = count.captures(text) {
            return Some(Query::Count { name: s(&c, 1) });
        }
        if let Some(c) = attribute.captures(text) {
            return Some(Query::Attribute { attribute: s(&c, 1), name: s(&c, 2) });
        }
        compare.captures(text).map(|c| Query::Compare { more: s(&c, 1), fewer: s(&c, 2) })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Exists { name } => write!(f, "Is there a {name}?"),
            Query::Count { name } => write!(f, "How many {name}s are there?"),
            Query::Attribute { attribute, name } => write!(f, "What {attribute} is the {name}?"),
            Query::Spatial { name, relation, reference } => {
                write!(f, "Is there a {name} {} the {reference}?", relation.phrase())
            }
            Query::Compare { more, fewer } => write!(f, "Are there more {more}s than {fewer}s?"),
        }
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

/// Ground-truth answer over the whole scene.
pub fn oracle_answer(scene: &Scene, query: &Query) -> String {
    oracle_answer_in(scene, &scene.full_region(), query)
}

/// Ground-truth answer restricted to objects centered in `region`.
pub fn oracle_answer_in(scene: &Scene, region: &Region, query: &Query) -> String {
    match query {
        Query::Exists { name } => yes_no(!scene.find(name, region).is_empty()),
        Query::Count { name } => scene.find(name, region).len().to_string(),
        Query::Attribute { attribute, name } => scene
            .find(name, region)
            .first()
            .and_then(|&i| scene.objects[i].attributes.get(attribute).cloned())
            .unwrap_or_else(|| "none".to_string()),
        Query::Spatial { name, relation, reference } => {
            let Some(&r) = scene.find(reference, region).first() else {
                return yes_no(false);
            };
            let side = relation.crop(region, scene.objects[r].bbox.center2());
            yes_no(scene.find(name, &side).iter().any(|&i| i != r))
        }
        Query::Compare { more, fewer } => {
            yes_no(scene.find(more, region).len() > scene.find(fewer, region).len())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scene {scene_id} cannot support a {kind} task: {reason}")]
pub struct UnsatisfiableKind {
    pub scene_id: String,
    pub kind: &'static str,
    pub reason: &'static str,
}

/// Names that occur exactly once in the scene, in first-seen order.
fn unique_names(scene: &Scene) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for o in &scene.objects {
        if scene.count_named(&o.name) == 1 && !out.contains(&o.name) {
            out.push(o.name.clone());
        }
    }
    out
}

fn present_names(scene: &Scene) -> Vec<String> {
    let mut out: Vec<String> = scene.objects.iter().map(|o| o.name.clone()).collect();
    out.sort();
    out.dedup();
    out
}

/// Picks a category: a present one with probability `p_present`, otherwise
/// any vocabulary word (possibly absent).
fn pick_name<R: Rng>(rng: &mut R, scene: &Scene, config: &SceneConfig, p_present: f64, exclude: &str) -> Option<String> {
    let present: Vec<_> = present_names(scene).into_iter().filter(|n| n != exclude).collect();
    if !present.is_empty() && rng.gen_bool(p_present) {
        return present.choose(rng).cloned();
    }
    let vocab: Vec<_> = config.vocabulary.iter().filter(|n| *n != exclude).cloned().collect();
    vocab.choose(rng).cloned()
}

/// Structured query of the requested kind; deterministic in `(scene, seed, kind)`.
pub fn generate_query(scene: &Scene, seed: u64, kind: TaskKind, config: &SceneConfig) -> Result<Query, UnsatisfiableKind> {
    let mut rng = seed::rng(seed);
    let unsat = |reason| UnsatisfiableKind { scene_id: scene.scene_id.clone(), kind: kind.as_str(), reason };
    let query = match kind {
        TaskKind::Existence => Query::Exists {
            name: pick_name(&mut rng, scene, config, 0.5, "").ok_or_else(|| unsat("empty vocabulary"))?,
        },
        TaskKind::Counting => Query::Count {
            name: pick_name(&mut rng, scene, config, 0.8, "").ok_or_else(|| unsat("empty vocabulary"))?,
        },
        TaskKind::Attribute => {
            let names = unique_names(scene);
            let attrs: Vec<_> = config.attributes.keys().cloned().collect();
            let name = names.choose(&mut rng).ok_or_else(|| unsat("no uniquely named object"))?.clone();
            let attribute = attrs.choose(&mut rng).ok_or_else(|| unsat("no attributes configured"))?.clone();
            Query::Attribute { attribute, name }
        }
        TaskKind::Spatial => {
            if scene.objects.len() < 2 {
                return Err(unsat("needs at least two objects"));
            }
            let reference = unique_names(scene).choose(&mut rng).ok_or_else(|| unsat("no uniquely named object"))?.clone();
            let name = pick_name(&mut rng, scene, config, 0.75, &reference)
                .ok_or_else(|| unsat("no second category"))?;
            let relation = *Relation::ALL.choose(&mut rng).expect("four relations");
            Query::Spatial { name, relation, reference }
        }
        TaskKind::Compare => {
            let more = pick_name(&mut rng, scene, config, 0.8, "").ok_or_else(|| unsat("empty vocabulary"))?;
            let fewer = pick_name(&mut rng, scene, config, 0.8, &more).ok_or_else(|| unsat("needs two categories"))?;
            Query::Compare { more, fewer }
        }
    };
    Ok(query)
}

/// Templated task with its oracle answer. The task id defaults to
/// `<scene_id>/<kind>`; callers usually assign their own.
pub fn generate_task(scene: &Scene, seed: u64, kind: TaskKind, config: &SceneConfig) -> Result<Task, UnsatisfiableKind> {
    let query = generate_query(scene, seed, kind, config)?;
    let answer = oracle_answer(scene, &query);
    Ok(Task::new(format!("{}/{}", scene.scene_id, kind.as_str()), scene.scene_id.clone(), query.to_string(), &answer)
        .expect("oracle answers are non-empty"))
}

/// Checks a task against its scene: the query must parse and the answer must
/// equal the oracle answer.
pub fn check_task(scene: &Scene, task: &Task) -> Result<()> {
    task.validate()?;
    if task.scene_ref != scene.scene_id {
        return Err(Error::Invalid(format!("task {} refers to {}, not {}", task.task_id, task.scene_ref, scene.scene_id)));
    }
    let query = Query::parse(&task.query)
        .ok_or_else(|| Error::Invalid(format!("task {}: unrecognized query {:?}", task.task_id, task.query)))?;
    let expected = oracle_answer(scene, &query);
    if expected != task.answer {
        return Err(Error::Invalid(format!("task {}: answer {:?} but scene says {:?}", task.task_id, task.answer, expected)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::sim::scene::{generate_scene, SceneObject};
    use crate::value::BBox;

    fn obj(name: &str, color: &str, bbox: BBox) -> SceneObject {
        SceneObject { name: name.into(), attributes: BTreeMap::from([("color".into(), color.into())]), bbox }
    }

    fn fixture() -> Scene {
        Scene {
            scene_id: "fx".into(),
            width: 512,
            height: 512,
            objects: vec![
                obj("chair", "red", BBox::new(10, 10, 50, 50)),
                obj("chair", "blue", BBox::new(100, 300, 140, 360)),
                obj("chair", "red", BBox::new(400, 20, 440, 80)),
                obj("mug", "green", BBox::new(200, 200, 230, 230)),
            ],
        }
    }

    #[test]
    fn oracle_examples() {
        let s = fixture();
        assert_eq!(oracle_answer(&s, &Query::Count { name: "chair".into() }), "3");
        assert_eq!(oracle_answer(&s, &Query::Exists { name: "dog".into() }), "no");
        assert_eq!(oracle_answer(&s, &Query::Attribute { attribute: "color".into(), name: "mug".into() }), "green");
        let left = Query::Spatial { name: "chair".into(), relation: Relation::Left, reference: "mug".into() };
        assert_eq!(oracle_answer(&s, &left), "yes");
        let below = Query::Spatial { name: "chair".into(), relation: Relation::Below, reference: "mug".into() };
        assert_eq!(oracle_answer(&s, &below), "yes");
        let cmp = Query::Compare { more: "chair".into(), fewer: "mug".into() };
        assert_eq!(oracle_answer(&s, &cmp), "yes");
    }

    #[test]
    fn spatial_ties_count_as_left() {
        let s = Scene {
            scene_id: "tie".into(),
            width: 512,
            height: 512,
            objects: vec![obj("mug", "red", BBox::new(100, 0, 120, 20)), obj("cat", "red", BBox::new(100, 200, 120, 220))],
        };
        let q = |relation| Query::Spatial { name: "cat".into(), relation, reference: "mug".into() };
        assert_eq!(oracle_answer(&s, &q(Relation::Left)), "yes");
        assert_eq!(oracle_answer(&s, &q(Relation::Right)), "no");
        assert_eq!(oracle_answer(&s, &q(Relation::Below)), "yes");
    }

    #[test]
    fn templates_parse_back() {
        let cfg = SceneConfig::default();
        for seed in 0..100 {
            let scene = generate_scene(seed, &cfg).unwrap();
            for kind in TaskKind::ALL {
                if let Ok(q) = generate_query(&scene, seed, kind, &cfg) {
                    assert_eq!(Query::parse(&q.to_string()), Some(q.clone()));
                    assert_eq!(q.kind(), kind);
                }
            }
        }
        assert_eq!(Query::parse("What is the meaning of life?"), None);
    }

    #[test]
    fn task_examples() {
        let cfg = SceneConfig::default();
        let s = fixture();
        let t = generate_task(&s, 1, TaskKind::Counting, &cfg).unwrap();
        check_task(&s, &t).unwrap();
        // Every counting task over this scene asks about a word whose count is known.
        let q = Query::parse(&t.query).unwrap();
        assert_eq!(t.answer, oracle_answer(&s, &q));

        let dogless = Task::new("t", "fx", "Is there a dog?", "no").unwrap();
        check_task(&s, &dogless).unwrap();

        let single = Scene { objects: vec![obj("mug", "red", BBox::new(0, 0, 20, 20))], ..fixture() };
        let err = generate_task(&single, 0, TaskKind::Spatial, &cfg).unwrap_err();
        assert_eq!(err.kind, "spatial");
    }

    #[test]
    fn counting_fixture_answer() {
        let t = Task::new("t", "fx", Query::Count { name: "chair".into() }.to_string(), &oracle_answer(&fixture(), &Query::Count { name: "chair".into() })).unwrap();
        assert_eq!((t.query.as_str(), t.answer.as_str()), ("How many chairs are there?", "3"));
    }
}
