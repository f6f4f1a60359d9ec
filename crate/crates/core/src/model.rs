//! Shared domain types: tasks, actions, feedback, workflows and mask samples.
//!
//! Every record type here is an immutable value once built. The line-delimited
//! wire form of [`Workflow`] and [`MaskSample`] carries a `schema` field fixed
//! to [`SCHEMA`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema tag written on every line-delimited record.
pub const SCHEMA: &str = "dwim/v1";

/// Sentinel that replaces a whole action inside a mask sample.
pub const MASK_TOKEN: &str = "<MASK_ACTION/>";

/// Default instruction attached to instruct-masking samples.
pub const DEFAULT_INSTRUCTION: &str =
    "Regenerate the masked step exactly; do not proceed to the next step.";

/// Prefix of every execution-fault payload.
pub const TRACEBACK_SENTINEL: &str = "Traceback (most recent call last):";

fn schema_tag() -> String {
    SCHEMA.to_string()
}

/// Folds an answer string into its comparison form.
///
/// Lowercases, strips surrounding whitespace and trailing sentence
/// punctuation, and collapses internal whitespace runs to one space.
pub fn normalize_answer(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let lowered = collapsed.to_lowercase();
    lowered
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?' | ',' | ';' | ':') || c.is_whitespace())
        .to_string()
}

/// One query instance over a symbolic scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub scene_ref: String,
    pub query: String,
    pub answer: String,
}

impl Task {
    /// Builds a task, normalizing the answer and rejecting an empty one.
    pub fn new(
        task_id: impl Into<String>,
        scene_ref: impl Into<String>,
        query: impl Into<String>,
        answer: &str,
    ) -> Result<Self> {
        let answer = normalize_answer(answer);
        if answer.is_empty() {
            return Err(Error::Invalid("task answer must be non-empty".into()));
        }
        Ok(Self {
            task_id: task_id.into(),
            scene_ref: scene_ref.into(),
            query: query.into(),
            answer,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.answer.is_empty() || normalize_answer(&self.answer) != self.answer {
            return Err(Error::Invalid(format!(
                "task {}: answer {:?} is not normalized",
                self.task_id, self.answer
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Thought,
    Code,
    Done,
}

/// One agent step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// 1-based step number; 0 while the action is not yet placed in a workflow.
    pub index: usize,
    pub kind: ActionKind,
    pub content: String,
    #[serde(default)]
    pub is_rethink: bool,
}

impl Action {
    pub fn thought(content: impl Into<String>) -> Self {
        let content = content.into();
        let is_rethink = is_rethink_text(&content);
        Self { index: 0, kind: ActionKind::Thought, content, is_rethink }
    }

    pub fn code(content: impl Into<String>) -> Self {
        Self { index: 0, kind: ActionKind::Code, content: content.into(), is_rethink: false }
    }

    pub fn done() -> Self {
        Self { index: 0, kind: ActionKind::Done, content: String::new(), is_rethink: false }
    }

    /// A Rethink thought from its two parts.
    pub fn rethink(discrepancy: &str, next: &str) -> Self {
        Self::thought(format!("Rethink. Discrepancy: {discrepancy} Next: {next}"))
    }

    pub fn at(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ActionKind::Done && !self.content.is_empty() {
            return Err(Error::Invalid(format!("done action {} carries content", self.index)));
        }
        if self.is_rethink && (self.kind != ActionKind::Thought || !is_rethink_text(&self.content)) {
            return Err(Error::Invalid(format!(
                "action {} marked rethink without discrepancy/next parts",
                self.index
            )));
        }
        Ok(())
    }
}

/// Splits a Rethink thought into its discrepancy description and next-step
/// suggestion. Both parts must be non-empty.
pub fn rethink_parts(text: &str) -> Option<(&str, &str)> {
    let d = text.find("Discrepancy:")?;
    let after_d = d + "Discrepancy:".len();
    let n = after_d + text[after_d..].find("Next:")?;
    let discrepancy = text[after_d..n].trim();
    let next = text[n + "Next:".len()..].trim();
    if discrepancy.is_empty() || next.is_empty() {
        None
    } else {
        Some((discrepancy, next))
    }
}

pub fn is_rethink_text(text: &str) -> bool {
    rethink_parts(text).is_some()
}

/// Environment response to one Code action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub step_index: usize,
    pub payload: String,
    pub is_error: bool,
}

impl Feedback {
    pub fn new(step_index: usize, payload: impl Into<String>) -> Self {
        let payload = payload.into();
        let is_error = payload.starts_with(TRACEBACK_SENTINEL);
        Self { step_index, payload, is_error }
    }
}

/// Initial context plus the append-only feedback log of one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    task: Task,
    tool_docs: String,
    feedback_log: Vec<Feedback>,
}

impl EnvState {
    pub fn new(task: Task, tool_docs: impl Into<String>) -> Self {
        Self { task, tool_docs: tool_docs.into(), feedback_log: Vec::new() }
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn tool_docs(&self) -> &str {
        &self.tool_docs
    }

    pub fn feedback_log(&self) -> &[Feedback] {
        &self.feedback_log
    }

    pub fn push(&mut self, feedback: Feedback) {
        self.feedback_log.push(feedback);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Standard,
    DiscrepancyAware,
    SingleTurn,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 3] =
        [GenerationMode::Standard, GenerationMode::DiscrepancyAware, GenerationMode::SingleTurn];

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Standard => "standard",
            GenerationMode::DiscrepancyAware => "discrepancy_aware",
            GenerationMode::SingleTurn => "single_turn",
        }
    }
}

/// An action paired with the feedback it produced, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
}

/// The full record of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    #[serde(default = "schema_tag")]
    pub schema: String,
    pub task_id: String,
    pub actions: Vec<Action>,
    pub feedbacks: Vec<Feedback>,
    #[serde(default)]
    pub flags: Option<Vec<u8>>,
    #[serde(default)]
    pub prediction: Option<String>,
    pub accepted: bool,
    pub generation_mode: GenerationMode,
    /// Why the episode ended early (backend failure, unparseable turns, limits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

impl Workflow {
    pub fn new(task_id: impl Into<String>, mode: GenerationMode) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            task_id: task_id.into(),
            actions: Vec::new(),
            feedbacks: Vec::new(),
            flags: None,
            prediction: None,
            accepted: false,
            generation_mode: mode,
            abort: None,
        }
    }

    pub fn ends_with_done(&self) -> bool {
        self.actions.last().is_some_and(|a| a.kind == ActionKind::Done)
    }

    /// Recomputes `accepted` against the task's answer.
    pub fn settle(&mut self, task: &Task) {
        self.accepted = is_accepted(self, task);
    }

    pub fn feedback_for(&self, step_index: usize) -> Option<&Feedback> {
        self.feedbacks.iter().find(|f| f.step_index == step_index)
    }

    /// Actions paired with their feedback, in order.
    pub fn steps(&self) -> Vec<Step> {
        self.actions
            .iter()
            .map(|a| Step { action: a.clone(), feedback: self.feedback_for(a.index).cloned() })
            .collect()
    }

    pub fn code_action_count(&self) -> usize {
        self.actions.iter().filter(|a| a.kind == ActionKind::Code).count()
    }

    /// Checks the structural invariants of a stored workflow.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Invalid(format!("workflow {}: {msg}", self.task_id)));
        if self.schema != SCHEMA {
            return err(format!("unsupported schema {:?}", self.schema));
        }
        for (i, action) in self.actions.iter().enumerate() {
            if action.index != i + 1 {
                return err(format!("action indices must be consecutive from 1, found {}", action.index));
            }
            action.validate()?;
            if action.kind == ActionKind::Done && i + 1 != self.actions.len() {
                return err("done action only allowed in last position".into());
            }
            let fb = self.feedbacks.iter().filter(|f| f.step_index == action.index).count();
            let expected = usize::from(action.kind == ActionKind::Code);
            if fb != expected {
                return err(format!("action {} has {fb} feedback records, expected {expected}", action.index));
            }
        }
        if self.feedbacks.len() != self.code_action_count() {
            return err("feedback records not aligned with code actions".into());
        }
        if let Some(flags) = &self.flags {
            if flags.len() != self.actions.len() || flags.iter().any(|&f| f > 1) {
                return err("flags must be 0/1 and aligned with actions".into());
            }
        }
        if self.accepted && !self.ends_with_done() {
            return err("accepted workflow must end with done".into());
        }
        Ok(())
    }
}

fn is_accepted(workflow: &Workflow, task: &Task) -> bool {
    workflow.ends_with_done()
        && workflow
            .prediction
            .as_deref()
            .is_some_and(|p| normalize_answer(p) == normalize_answer(&task.answer))
}

/// Binary workflow reward: 1 iff the workflow terminated and its prediction
/// matches the task answer.
pub fn reward(workflow: &Workflow, task: &Task) -> Result<u8> {
    if workflow.task_id != task.task_id {
        return Err(Error::Usage(format!(
            "reward: workflow for {} evaluated against task {}",
            workflow.task_id, task.task_id
        )));
    }
    Ok(u8::from(is_accepted(workflow, task)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    InstructMasking,
    RandomMasking,
    MaskingWRethink,
    NaiveSft,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 4] = [
        MaskVariant::InstructMasking,
        MaskVariant::RandomMasking,
        MaskVariant::MaskingWRethink,
        MaskVariant::NaiveSft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskVariant::InstructMasking => "instruct_masking",
            MaskVariant::RandomMasking => "random_masking",
            MaskVariant::MaskingWRethink => "masking_w_rethink",
            MaskVariant::NaiveSft => "naive_sft",
        }
    }
}

/// What a mask sample asks the model to produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleTarget {
    /// The single masked action.
    Action(Action),
    /// The whole workflow (naive SFT).
    Workflow(Vec<Step>),
}

/// One instruct-masking training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSample {
    #[serde(default = "schema_tag")]
    pub schema: String,
    pub task_id: String,
    pub variant: MaskVariant,
    /// Masked step; absent for naive SFT samples.
    pub target_index: Option<usize>,
    pub prefix: Vec<Step>,
    /// Absent for naive SFT samples.
    pub mask_token: Option<String>,
    pub suffix: Vec<Step>,
    pub instruction: String,
    pub target: SampleTarget,
    pub reward: u8,
    pub flags: Vec<u8>,
}
