//! Simulated perception tools with configurable error injection.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::noise::{ErrorMode, Library, NoiseModel, Tool};
use super::query::{oracle_answer_in, Query, Relation};
use super::scene::{Scene, SceneConfig};
use crate::seed;
use crate::value::{BBox, ObjectRef, Region, Value};

/// A single tool invocation with its arguments already checked for type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolCall {
    Find { name: String },
    Exists { name: String },
    VerifyProperty { name: String, property: String },
    BestDescription { name: String, options: Vec<String> },
    SimpleQuery { question: String },
    LlmQuery { question: String },
    Crop { relation: Relation, center2: (i64, i64) },
}

impl ToolCall {
    pub fn tool(&self) -> Tool {
        match self {
            ToolCall::Find { .. } => Tool::Detector,
            ToolCall::Exists { .. } => Tool::CheckExistence,
            ToolCall::VerifyProperty { .. } => Tool::VerifyProperty,
            ToolCall::BestDescription { .. } => Tool::PropertyMatching,
            ToolCall::SimpleQuery { .. } => Tool::SimpleQuery,
            ToolCall::LlmQuery { .. } => Tool::ExternalKnowledge,
            ToolCall::Crop { .. } => Tool::ImageCrop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub value: Value,
    /// Hidden from the agent; only test oracles read it.
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolFault {
    #[error("ToolDisabled: {0} is not in the active tool library")]
    Disabled(Tool),
    #[error("ToolError: {0} backend failed to produce a result")]
    Raised(Tool),
}

/// Small fixed knowledge base answering "what kind of thing" questions.
const KNOWLEDGE: [(&str, &str); 10] = [
    ("chair", "furniture"),
    ("table", "furniture"),
    ("lamp", "furniture"),
    ("mug", "kitchenware"),
    ("bottle", "kitchenware"),
    ("book", "stationery"),
    ("dog", "animal"),
    ("cat", "animal"),
    ("car", "vehicle"),
    ("tree", "plant"),
];

fn knowledge(question: &str) -> String {
    let lower = question.to_lowercase();
    lower
        .split(|c: char| !c.is_ascii_alphabetic())
        .find_map(|w| {
            let singular = w.strip_suffix('s').unwrap_or(w);
            KNOWLEDGE.iter().find(|(k, _)| *k == w || *k == singular).map(|(_, v)| v.to_string())
        })
        .unwrap_or_else(|| "unknown".to_string())
}

fn object_ref(scene: &Scene, i: usize) -> Value {
    let o = &scene.objects[i];
    Value::Object(ObjectRef { id: i, name: o.name.clone(), bbox: o.bbox })
}

/// Noise-free result of a call within `region`.
pub fn oracle_value(call: &ToolCall, scene: &Scene, region: &Region) -> Value {
    match call {
        ToolCall::Find { name } => Value::List(scene.find(name, region).into_iter().map(|i| object_ref(scene, i)).collect()),
        ToolCall::Exists { name } => Value::Bool(!scene.find(name, region).is_empty()),
        ToolCall::VerifyProperty { name, property } => Value::Bool(
            scene
                .find(name, region)
                .iter()
                .any(|&i| scene.objects[i].attributes.values().any(|v| v == property)),
        ),
        ToolCall::BestDescription { name, options } => {
            let attrs = scene.find(name, region).first().map(|&i| &scene.objects[i].attributes);
            let hit = attrs.and_then(|a| options.iter().find(|o| a.values().any(|v| v == *o)));
            Value::Text(hit.or(options.first()).cloned().unwrap_or_else(|| "none".to_string()))
        }
        ToolCall::SimpleQuery { question } => Value::Text(match Query::parse(question) {
            Some(q) => oracle_answer_in(scene, region, &q),
            None => "unknown".to_string(),
        }),
        ToolCall::LlmQuery { question } => Value::Text(knowledge(question)),
        ToolCall::Crop { relation, center2 } => Value::Patch(relation.crop(region, *center2)),
    }
}

fn phantom(scene: &Scene, name: &str, rng: &mut ChaCha8Rng) -> Value {
    let w = rng.gen_range(8..=scene.width.clamp(8, 64));
    let h = rng.gen_range(8..=scene.height.clamp(8, 64));
    let left = rng.gen_range(0..=(scene.width - w).max(0));
    let top = rng.gen_range(0..=(scene.height - h).max(0));
    Value::Object(ObjectRef {
        id: scene.objects.len() + rng.gen_range(0..1000),
        name: name.to_string(),
        bbox: BBox::new(left, top, left + w, top + h),
    })
}

fn drop_some(items: &[Value], rng: &mut ChaCha8Rng) -> Vec<Value> {
    let forced = rng.gen_range(0..items.len());
    items
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != forced && rng.gen_bool(0.5))
        .map(|(_, v)| v.clone())
        .collect()
}

fn shift_list(items: &[Value], name: &str, scene: &Scene, rng: &mut ChaCha8Rng) -> Vec<Value> {
    let mut out = items.to_vec();
    if out.is_empty() || rng.gen_bool(0.5) {
        out.push(phantom(scene, name, rng));
    } else {
        let i = rng.gen_range(0..out.len());
        out.remove(i);
    }
    out
}

fn shift_int(n: i64, rng: &mut ChaCha8Rng) -> i64 {
    if n <= 0 || rng.gen_bool(0.5) {
        n + 1
    } else {
        n - 1
    }
}

fn wrong_text(oracle: &str, config: &SceneConfig, rng: &mut ChaCha8Rng) -> String {
    match oracle {
        "yes" => return "no".into(),
        "no" => return "yes".into(),
        _ => {}
    }
    if let Ok(n) = oracle.parse::<i64>() {
        return shift_int(n, rng).to_string();
    }
    let pools = config.attributes.values().chain(std::iter::once(&config.vocabulary));
    for pool in pools {
        if pool.iter().any(|v| v == oracle) {
            let others: Vec<_> = pool.iter().filter(|v| *v != oracle).collect();
            if let Some(v) = others.choose(rng) {
                return v.to_string();
            }
        }
    }
    if oracle == "unknown" { "none" } else { "unknown" }.to_string()
}

fn corrupt(call: &ToolCall, oracle: &Value, mode: ErrorMode, scene: &Scene, config: &SceneConfig, rng: &mut ChaCha8Rng) -> Value {
    let detected_name = match call {
        ToolCall::Find { name } => name.as_str(),
        _ => "object",
    };
    match (mode, oracle) {
        (ErrorMode::MissDetection, Value::List(items)) if !items.is_empty() => Value::List(drop_some(items, rng)),
        (ErrorMode::MissDetection, Value::List(_)) => Value::List(vec![phantom(scene, detected_name, rng)]),
        (ErrorMode::OffByOne | ErrorMode::WrongValue, Value::List(items)) => {
            Value::List(shift_list(items, detected_name, scene, rng))
        }
        (ErrorMode::OffByOne | ErrorMode::WrongValue, Value::Int(n)) => Value::Int(shift_int(*n, rng)),
        (ErrorMode::OffByOne, Value::Text(t)) if t.parse::<i64>().is_ok() => {
            Value::Text(shift_int(t.parse().expect("checked"), rng).to_string())
        }
        (_, Value::Bool(b)) => Value::Bool(!b),
        (_, Value::Text(t)) => match call {
            ToolCall::BestDescription { options, .. } => {
                let others: Vec<_> = options.iter().filter(|o| *o != t).collect();
                Value::Text(others.choose(rng).map(|s| s.to_string()).unwrap_or_else(|| wrong_text(t, config, rng)))
            }
            _ => Value::Text(wrong_text(t, config, rng)),
        },
        (_, Value::Patch(_)) => match call {
            ToolCall::Crop { relation, center2 } => {
                let flipped = match relation {
                    Relation::Left => Relation::Right,
                    Relation::Right => Relation::Left,
                    Relation::Above => Relation::Below,
                    Relation::Below => Relation::Above,
                };
                Value::Patch(flipped.crop(&scene.full_region(), *center2))
            }
            _ => Value::Patch(scene.full_region()),
        },
        (_, other) => other.clone(),
    }
}

/// Everything a tool call observes besides its arguments.
#[derive(Debug, Clone, Copy)]
pub struct ToolEnv<'a> {
    pub scene: &'a Scene,
    pub config: &'a SceneConfig,
    pub noise: &'a NoiseModel,
    pub library: &'a Library,
}

/// Serves one call: the oracle value with probability `1 - error_rate`,
/// otherwise the tool's error mode applied to it. Exactly one uniform draw
/// decides corruption; further draws happen only on the corrupted path.
pub fn invoke_tool(call: &ToolCall, region: &Region, env: ToolEnv<'_>, rng: &mut ChaCha8Rng) -> Result<ToolResult, ToolFault> {
    let tool = call.tool();
    if !env.library.enabled(tool) {
        return Err(ToolFault::Disabled(tool));
    }
    let noise = env.noise.for_tool(tool);
    let oracle = oracle_value(call, env.scene, region);
    let hit = rng.gen::<f64>() < noise.error_rate;
    if !hit {
        return Ok(ToolResult { value: oracle, corrupted: false });
    }
    if noise.mode == ErrorMode::RaiseException {
        return Err(ToolFault::Raised(tool));
    }
    let value = corrupt(call, &oracle, noise.mode, env.scene, env.config, rng);
    let corrupted = value != oracle;
    Ok(ToolResult { value, corrupted })
}

/// Record of one served call, kept for test oracles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub tool: Tool,
    /// True when the call returned a corrupted value or raised.
    pub corrupted: bool,
}

/// Per-episode tool state: the scene, the noise process and its RNG stream.
#[derive(Debug, Clone)]
pub struct ToolSession {
    scene: Scene,
    config: SceneConfig,
    noise: NoiseModel,
    library: Library,
    rng: ChaCha8Rng,
    log: Vec<CallRecord>,
}

impl ToolSession {
    pub fn new(scene: Scene, config: SceneConfig, noise: NoiseModel, library: Library, episode_seed: u64) -> Self {
        Self { scene, config, noise, library, rng: seed::rng(episode_seed), log: Vec::new() }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn library(&self) -> &Library {
        &self.library
    }

    pub fn invoke(&mut self, call: &ToolCall, region: &Region) -> Result<ToolResult, ToolFault> {
        let env = ToolEnv { scene: &self.scene, config: &self.config, noise: &self.noise, library: &self.library };
        let result = invoke_tool(call, region, env, &mut self.rng);
        match &result {
            Ok(r) => self.log.push(CallRecord { tool: call.tool(), corrupted: r.corrupted }),
            Err(ToolFault::Raised(tool)) => self.log.push(CallRecord { tool: *tool, corrupted: true }),
            Err(ToolFault::Disabled(_)) => {}
        }
        result
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.log
    }
}
