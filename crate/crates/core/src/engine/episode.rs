use serde::{Deserialize, Serialize};

use super::backend::Policy;
use super::detector::{detect_discrepancy, DetectorKind, Observation};
use crate::dsl::{builtin_docs, run_code, Bindings};
use crate::error::{Error, Result};
use crate::model::{Action, ActionKind, EnvState, GenerationMode, Step, Task, Workflow};
use crate::protocol::{parse_action, render_prompt_with, PromptMode, PromptOptions};
use crate::sim::ToolSession;

/// Suggestion written into engine-authored Rethink thoughts.
const RETHINK_NEXT: &str = "try an alternative tool path instead of repeating the last call.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeLimits {
    /// Cap on recorded actions, Rethink thoughts included.
    pub max_turns: usize,
    /// Cap on Rethink thoughts per episode.
    pub max_rethinks: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { max_turns: 10, max_rethinks: 3 }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }
}

/// A finished episode plus its tool-call accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeOutcome {
    pub workflow: Workflow,
    pub tool_calls: usize,
    pub corrupted_calls: usize,
    pub rethinks: usize,
}

fn prompt_mode(mode: GenerationMode) -> PromptMode {
    match mode {
        GenerationMode::DiscrepancyAware => PromptMode::AnswerConditioned,
        GenerationMode::Standard | GenerationMode::SingleTurn => PromptMode::Standard,
    }
}

/// One turn: a draw plus parse, with a single silent re-draw when the turn
/// carries no usable tag.
fn draw(policy: &dyn Policy, prompt: &str) -> std::result::Result<Action, String> {
    let mut last = String::new();
    for _ in 0..2 {
        let raw = policy.next_action(prompt).map_err(|e| e.to_string())?;
        match parse_action(&raw) {
            Ok(action) => return Ok(action),
            Err(e) => last = format!("unparseable turn: {e}"),
        }
    }
    Err(last)
}

/// Runs one episode against a fresh tool session for `task`. Backend and
/// parse failures end the episode with an `abort` annotation; nothing is
/// raised past this boundary.
pub fn run_episode(
    task: &Task,
    policy: &dyn Policy,
    mut session: ToolSession,
    mode: GenerationMode,
    limits: EpisodeLimits,
    detector: DetectorKind,
    options: &PromptOptions,
) -> EpisodeOutcome {
    let mut env = EnvState::new(task.clone(), builtin_docs(session.library()));
    let mut bindings = Bindings::for_image(session.scene().full_region());
    let mut steps: Vec<Step> = Vec::new();
    let mut rethinks = 0;
    let mut abort = None;
    let mut finished = false;

    while !finished {
        if steps.len() >= limits.max_turns {
            abort = Some(format!("turn limit {} reached", limits.max_turns));
            break;
        }
        let prompt = render_prompt_with(&env, &steps, prompt_mode(mode), options);
        let action = match draw(policy, &prompt) {
            Ok(a) => a.at(steps.len() + 1),
            Err(e) => {
                abort = Some(e);
                break;
            }
        };
        match action.kind {
            ActionKind::Code => {
                let feedback = run_code(&action.content, &mut bindings, &mut session, action.index);
                env.push(feedback.clone());
                steps.push(Step { action, feedback: Some(feedback.clone()) });
                if mode == GenerationMode::SingleTurn {
                    steps.push(Step { action: Action::done().at(steps.len() + 1), feedback: None });
                    finished = true;
                } else if mode == GenerationMode::DiscrepancyAware
                    && detector == DetectorKind::SimOracle
                    && rethinks < limits.max_rethinks
                    && steps.len() < limits.max_turns
                {
                    let actions: Vec<Action> = steps.iter().map(|s| s.action.clone()).collect();
                    let obs = Observation { feedback: Some(&feedback), task, actions: &actions, bindings: Some(&bindings) };
                    if let Some(description) = detect_discrepancy(obs, detector) {
                        let rethink = Action::rethink(&description, RETHINK_NEXT).at(steps.len() + 1);
                        steps.push(Step { action: rethink, feedback: None });
                        rethinks += 1;
                    }
                }
            }
            ActionKind::Thought => {
                if mode == GenerationMode::SingleTurn {
                    abort = Some("single-turn policy answered without code".into());
                    break;
                }
                let recognized = mode == GenerationMode::DiscrepancyAware
                    && detector == DetectorKind::MarkerParse
                    && action.is_rethink;
                steps.push(Step { action, feedback: None });
                if recognized {
                    rethinks += 1;
                }
            }
            ActionKind::Done => {
                if mode == GenerationMode::SingleTurn {
                    abort = Some("single-turn policy answered without code".into());
                    break;
                }
                steps.push(Step { action, feedback: None });
                finished = true;
            }
        }
    }

    let mut workflow = Workflow::new(task.task_id.clone(), mode);
    for step in steps {
        if let Some(fb) = step.feedback {
            workflow.feedbacks.push(fb);
        }
        workflow.actions.push(step.action);
    }
    if finished {
        workflow.prediction = bindings.final_answer().map(|v| v.display());
    }
    workflow.abort = abort;
    workflow.settle(task);
    let calls = session.calls();
    EpisodeOutcome {
        tool_calls: calls.len(),
        corrupted_calls: calls.iter().filter(|c| c.corrupted).count(),
        rethinks,
        workflow,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Mutex;

    use super::*;
    use crate::engine::backend::BackendError;
    use crate::engine::script::Script;
    use crate::protocol::ANSWER_LINE_PREFIX;
    use crate::sim::{ErrorMode, Library, NoiseModel, Scene, SceneConfig, SceneObject, Tool};
    use crate::value::BBox;

    fn scene() -> Scene {
        let chair = |l: i64| SceneObject {
            name: "chair".into(),
            attributes: BTreeMap::from([("color".into(), "red".into()), ("size".into(), "small".into())]),
            bbox: BBox::new(l, 10, l + 30, 40),
        };
        Scene { scene_id: "s".into(), width: 512, height: 512, objects: vec![chair(10), chair(200)] }
    }

    fn task() -> Task {
        Task::new("t", "s", "How many chairs are there?", "2").unwrap()
    }

    fn session(noise: NoiseModel) -> ToolSession {
        ToolSession::new(scene(), SceneConfig::default(), noise, Library::complete(), 11)
    }

    /// Records every prompt it is shown.
    struct Recorder<P> {
        inner: P,
        prompts: Mutex<Vec<String>>,
    }

    impl<P: Policy> Policy for Recorder<P> {
        fn next_action(&self, prompt: &str) -> std::result::Result<String, BackendError> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            self.inner.next_action(prompt)
        }
    }

    struct Fixed(Vec<&'static str>, Mutex<usize>);

    impl Policy for Fixed {
        fn next_action(&self, _: &str) -> std::result::Result<String, BackendError> {
            let mut i = self.1.lock().unwrap();
            *i += 1;
            self.0.get(*i - 1).map(|s| s.to_string()).ok_or(BackendError::ScriptExhausted("fixed".into()))
        }
    }

    fn run(policy: &dyn Policy, noise: NoiseModel, mode: GenerationMode, limits: EpisodeLimits) -> EpisodeOutcome {
        run_episode(&task(), policy, session(noise), mode, limits, DetectorKind::SimOracle, &PromptOptions::default())
    }

    #[test]
    fn noiseless_optimal_is_accepted_in_every_mode() {
        for mode in GenerationMode::ALL {
            let out = run(&Script::optimal(), NoiseModel::noiseless(), mode, EpisodeLimits::default());
            let wf = out.workflow;
            assert!(wf.accepted, "{mode:?}: {wf:?}");
            assert_eq!(wf.prediction.as_deref(), Some("2"));
            assert_eq!(wf.actions.len(), 2);
            wf.validate().unwrap();
        }
    }

    #[test]
    fn forced_fault_gets_rethink_before_retry() {
        // the detector always drops detections, so count(find) undercounts
        let noise = NoiseModel::noiseless().with_tool(Tool::Detector, 1.0, ErrorMode::MissDetection);
        let out = run(&Script::with_fallbacks(), noise.clone(), GenerationMode::DiscrepancyAware, EpisodeLimits::default());
        let kinds: Vec<_> = out.workflow.actions.iter().map(|a| (a.kind, a.is_rethink)).collect();
        assert_eq!(
            kinds,
            [(ActionKind::Code, false), (ActionKind::Thought, true), (ActionKind::Code, false), (ActionKind::Done, false)]
        );
        let rethink = &out.workflow.actions[1].content;
        assert!(
            rethink.starts_with("Rethink. Discrepancy: final_answer ") && rethink.contains("contradicts expectation 2"),
            "{rethink}"
        );
        assert!(out.workflow.actions[2].content.contains("simple_query"));
        assert!(out.workflow.accepted);
        assert_eq!(out.rethinks, 1);

        let std = run(&Script::with_fallbacks(), noise, GenerationMode::Standard, EpisodeLimits::default());
        assert!(!std.workflow.accepted);
        assert!(std.workflow.ends_with_done());
        assert_ne!(std.workflow.prediction.as_deref(), Some("2"));
    }

    #[test]
    fn raising_tool_reaches_fallback_in_both_modes() {
        let noise = NoiseModel::noiseless().with_tool(Tool::Detector, 1.0, ErrorMode::RaiseException);
        for mode in [GenerationMode::Standard, GenerationMode::DiscrepancyAware] {
            let out = run(&Script::with_fallbacks(), noise.clone(), mode, EpisodeLimits::default());
            assert!(out.workflow.accepted, "{mode:?}");
            assert!(out.workflow.feedbacks[0].is_error);
            assert_eq!(out.corrupted_calls, 1);
        }
    }

    #[test]
    fn turn_limit_leaves_no_prediction() {
        let limits = EpisodeLimits { max_turns: 1, max_rethinks: 3 };
        let out = run(&Script::optimal(), NoiseModel::noiseless(), GenerationMode::Standard, limits);
        assert!(!out.workflow.accepted);
        assert_eq!(out.workflow.prediction, None);
        assert!(out.workflow.abort.as_deref().unwrap().contains("turn limit"));
    }

    #[test]
    fn prompts_grow_monotonically_and_hide_answer_in_standard_mode() {
        let noise = NoiseModel::noiseless().with_tool(Tool::Detector, 1.0, ErrorMode::MissDetection);
        for mode in [GenerationMode::Standard, GenerationMode::DiscrepancyAware] {
            let rec = Recorder { inner: Script::with_fallbacks(), prompts: Mutex::new(Vec::new()) };
            run(&rec, noise.clone(), mode, EpisodeLimits::default());
            let prompts = rec.prompts.into_inner().unwrap();
            assert!(prompts.len() >= 2);
            for pair in prompts.windows(2) {
                assert!(pair[1].starts_with(&pair[0]), "history must only grow");
            }
            let conditioned = mode == GenerationMode::DiscrepancyAware;
            assert!(prompts.iter().all(|p| p.contains(ANSWER_LINE_PREFIX) == conditioned));
        }
    }

    #[test]
    fn one_silent_redraw_then_abort() {
        let p = Fixed(vec!["garbage", "<code>```\nfinal_answer = 2\n```</code>", "<done></done>"], Mutex::new(0));
        let out = run(&p, NoiseModel::noiseless(), GenerationMode::Standard, EpisodeLimits::default());
        assert!(out.workflow.accepted);
        assert_eq!(out.workflow.actions.len(), 2);

        let p = Fixed(vec!["garbage", "<thought>a</thought><code>```\nx\n```</code>"], Mutex::new(0));
        let out = run(&p, NoiseModel::noiseless(), GenerationMode::Standard, EpisodeLimits::default());
        assert!(!out.workflow.accepted);
        assert!(out.workflow.abort.as_deref().unwrap().starts_with("unparseable turn"));
    }

    #[test]
    fn backend_failure_aborts() {
        let p = Fixed(vec![], Mutex::new(0));
        let out = run(&p, NoiseModel::noiseless(), GenerationMode::DiscrepancyAware, EpisodeLimits::default());
        assert!(!out.workflow.accepted);
        assert!(out.workflow.abort.as_deref().unwrap().contains("script exhausted"));
        out.workflow.validate().unwrap();
    }

    #[test]
    fn marker_parse_counts_backend_rethinks() {
        let noise = NoiseModel::noiseless().with_tool(Tool::Detector, 1.0, ErrorMode::RaiseException);
        let out = run_episode(
            &task(),
            &Script::self_reflecting(),
            session(noise),
            GenerationMode::DiscrepancyAware,
            EpisodeLimits::default(),
            DetectorKind::MarkerParse,
            &PromptOptions::default(),
        );
        assert_eq!(out.rethinks, 1);
        assert!(out.workflow.actions[1].is_rethink);
        assert!(out.workflow.accepted);
    }

    #[test]
    fn single_turn_appends_implicit_done() {
        let noise = NoiseModel::noiseless().with_tool(Tool::Detector, 1.0, ErrorMode::RaiseException);
        let out = run(&Script::with_fallbacks(), noise, GenerationMode::SingleTurn, EpisodeLimits::default());
        assert_eq!(out.workflow.actions.len(), 2);
        assert_eq!(out.workflow.actions[1].kind, ActionKind::Done);
        assert!(!out.workflow.accepted);
        assert_eq!(out.workflow.prediction, None);
    }
}
