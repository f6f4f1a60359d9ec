//! Deterministic simulated environment: synthetic scenes, templated tasks with
//! known answers, and perception tools that fail at configurable rates.

mod noise;
mod query;
mod scene;
mod tools;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use noise::{ErrorMode, Library, NoiseModel, Tool, ToolNoise};
pub use query::{
    check_task, generate_query, generate_task, oracle_answer, oracle_answer_in, Query, Relation, TaskKind,
    UnsatisfiableKind,
};
pub use scene::{generate_scene, Scene, SceneConfig, SceneObject};
pub use tools::{invoke_tool, oracle_value, CallRecord, ToolCall, ToolEnv, ToolFault, ToolResult, ToolSession};

pub(crate) use scene::hex_digest;

use crate::error::{Error, Result};
use crate::model::{Task, SCHEMA};
use crate::seed;

/// Environment section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub scene: SceneConfig,
    pub noise: NoiseModel,
    pub library: Library,
    /// Task kinds drawn by the generator, cycled in order.
    pub kinds: Vec<TaskKind>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            noise: NoiseModel::default(),
            library: Library::complete(),
            kinds: TaskKind::ALL.to_vec(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        if self.kinds.is_empty() {
            return Err(Error::Config("kinds must name at least one task kind".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// One line of a task fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub schema: String,
    pub scene: Scene,
    pub task: Task,
}

impl TaskRecord {
    pub fn new(scene: Scene, task: Task) -> Self {
        Self { schema: SCHEMA.to_string(), scene, task }
    }
}

/// Generates `n` scene+task pairs. Item `i` uses seeds split from `(seed, i)`;
/// kinds cycle through `config.kinds`, skipping kinds the scene cannot support.
pub fn generate_task_set(seed: u64, n: usize, config: &EnvConfig) -> Result<Vec<TaskRecord>> {
    config.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let item_seed = seed::split_index(seed, i as u64);
        let mut scene = generate_scene(seed::split(item_seed, "scene"), &config.scene)?;
        scene.scene_id = format!("s{i:05}");
        let task_seed = seed::split(item_seed, "task");
        let k = config.kinds.len();
        let task = (0..k)
            .find_map(|j| generate_task(&scene, task_seed, config.kinds[(i + j) % k], &config.scene).ok())
            .or_else(|| generate_task(&scene, task_seed, TaskKind::Counting, &config.scene).ok())
            .ok_or_else(|| Error::Config("no configured task kind is satisfiable".into()))?;
        let task = Task { task_id: format!("t{i:05}"), ..task };
        out.push(TaskRecord::new(scene, task));
    }
    Ok(out)
}

/// Scenes indexed by id, as seen by collection.
#[derive(Debug, Clone, Default)]
pub struct SceneStore {
    scenes: BTreeMap<String, Scene>,
}

impl SceneStore {
    pub fn from_records(records: &[TaskRecord]) -> Result<Self> {
        let mut scenes = BTreeMap::new();
        for r in records {
            match scenes.get(&r.scene.scene_id) {
                Some(existing) if existing != &r.scene => {
                    return Err(Error::Invalid(format!("conflicting definitions of scene {}", r.scene.scene_id)))
                }
                _ => {
                    scenes.insert(r.scene.scene_id.clone(), r.scene.clone());
                }
            }
        }
        Ok(Self { scenes })
    }

    pub fn get(&self, scene_ref: &str) -> Option<&Scene> {
        self.scenes.get(scene_ref)
    }

    pub fn insert(&mut self, scene: Scene) {
        self.scenes.insert(scene.scene_id.clone(), scene);
    }
}
