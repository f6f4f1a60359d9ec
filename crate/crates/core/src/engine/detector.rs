//! Discrepancy detection between execution feedback and the expected answer.

use serde::{Deserialize, Serialize};

use crate::dsl::Bindings;
use crate::model::{normalize_answer, rethink_parts, Action, ActionKind, Feedback, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Checks feedback against the task answer with access to the episode's
    /// bindings; the engine writes the Rethink thought.
    #[default]
    SimOracle,
    /// Recognizes Rethink thoughts written by the backend itself.
    MarkerParse,
}

/// What the detector may inspect after the latest action.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Feedback of the latest action, if it was Code.
    pub feedback: Option<&'a Feedback>,
    pub task: &'a Task,
    /// All actions so far; the last one is the action just taken.
    pub actions: &'a [Action],
    /// Episode variables; required by [`DetectorKind::SimOracle`].
    pub bindings: Option<&'a Bindings>,
}

/// Returns a one-line description of the discrepancy, if any.
pub fn detect_discrepancy(obs: Observation<'_>, detector: DetectorKind) -> Option<String> {
    match detector {
        DetectorKind::SimOracle => sim_oracle(obs),
        DetectorKind::MarkerParse => {
            let last = obs.actions.last()?;
            if last.kind != ActionKind::Thought || !last.is_rethink {
                return None;
            }
            rethink_parts(&last.content).map(|(d, _)| d.to_string())
        }
    }
}

enum Shape {
    Int(i64),
    YesNo(bool),
    Text(String),
}

fn answer_shape(y: &str) -> Shape {
    match y {
        "yes" => Shape::YesNo(true),
        "no" => Shape::YesNo(false),
        _ => y.parse().map(Shape::Int).unwrap_or_else(|_| Shape::Text(y.to_string())),
    }
}

/// Reads a feedback payload that looks like a bare answer value.
fn payload_shape(payload: &str) -> Option<Shape> {
    let p = payload.trim();
    match p {
        "True" => return Some(Shape::YesNo(true)),
        "False" => return Some(Shape::YesNo(false)),
        _ => {}
    }
    if let Ok(n) = p.parse() {
        return Some(Shape::Int(n));
    }
    let inner = p.strip_prefix('\'')?.strip_suffix('\'')?;
    let text = normalize_answer(inner);
    Some(match text.as_str() {
        "yes" => Shape::YesNo(true),
        "no" => Shape::YesNo(false),
        _ => Shape::Text(text),
    })
}

fn sim_oracle(obs: Observation<'_>) -> Option<String> {
    let fb = obs.feedback?;
    if fb.is_error {
        let last = fb.payload.lines().last().unwrap_or_default();
        return Some(format!("execution fault ({last})."));
    }
    let y = normalize_answer(&obs.task.answer);
    let expected = answer_shape(&y);
    if let Some(got) = payload_shape(&fb.payload) {
        let contradiction = match (&got, &expected) {
            (Shape::Int(a), Shape::Int(b)) => (a != b).then(|| format!("count {a} contradicts expectation {b}.")),
            (Shape::YesNo(a), Shape::YesNo(b)) => (a != b).then(|| {
                format!("result {} contradicts expectation {y}.", fb.payload.trim())
            }),
            (Shape::Text(a), Shape::Text(b)) => {
                (a != b).then(|| format!("value {a:?} contradicts expectation {b:?}."))
            }
            _ => None,
        };
        if contradiction.is_some() {
            return contradiction;
        }
    }
    let value = obs.bindings?.final_answer()?;
    let predicted = normalize_answer(&value.display());
    (predicted != y).then(|| format!("final_answer {} contradicts expectation {y}.", value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{Region, Value};

    fn task(y: &str) -> Task {
        Task::new("t", "s", "How many chairs are there?", y).unwrap()
    }

    fn obs<'a>(fb: &'a Feedback, t: &'a Task, b: Option<&'a Bindings>) -> Observation<'a> {
        Observation { feedback: Some(fb), task: t, actions: &[], bindings: b }
    }

    #[test]
    fn traceback_is_execution_fault() {
        let fb = Feedback::new(1, "Traceback (most recent call last):\n  Line 1, in <cell>\nUnknownBuiltin: foo");
        let d = detect_discrepancy(obs(&fb, &task("2"), None), DetectorKind::SimOracle).unwrap();
        assert!(d.starts_with("execution fault"), "{d}");
        assert!(d.contains("UnknownBuiltin"));
    }

    #[test]
    fn count_contradiction() {
        let fb = Feedback::new(1, "0");
        let d = detect_discrepancy(obs(&fb, &task("2"), None), DetectorKind::SimOracle).unwrap();
        assert_eq!(d, "count 0 contradicts expectation 2.");
    }

    #[test]
    fn consistent_feedback_is_silent() {
        let t = task("2");
        let mut b = Bindings::for_image(Region::full(10, 10));
        b.set("final_answer", Value::Int(2));
        let fb = Feedback::new(1, "2");
        assert_eq!(detect_discrepancy(obs(&fb, &t, Some(&b)), DetectorKind::SimOracle), None);
        let fb = Feedback::new(1, "");
        assert_eq!(detect_discrepancy(obs(&fb, &t, Some(&b)), DetectorKind::SimOracle), None);
        // unrelated shapes are not compared
        let fb = Feedback::new(1, "[ImagePatch(chair, 0, 0, 4, 4)]");
        assert_eq!(detect_discrepancy(obs(&fb, &t, Some(&b)), DetectorKind::SimOracle), None);
    }

    #[test]
    fn final_answer_binding_mismatch() {
        let t = Task::new("t", "s", "Is there a dog?", "yes").unwrap();
        let mut b = Bindings::for_image(Region::full(10, 10));
        b.set("final_answer", Value::Text("no".into()));
        let fb = Feedback::new(1, "");
        let d = detect_discrepancy(obs(&fb, &t, Some(&b)), DetectorKind::SimOracle).unwrap();
        assert!(d.contains("final_answer 'no'"), "{d}");
        b.set("final_answer", Value::Text("Yes".into()));
        assert_eq!(detect_discrepancy(obs(&fb, &t, Some(&b)), DetectorKind::SimOracle), None);
    }

    #[test]
    fn marker_parse_reads_backend_rethinks() {
        let t = task("2");
        let acts = [Action::code("x").at(1), Action::rethink("the count looks off.", "recount.").at(2)];
        let o = Observation { feedback: None, task: &t, actions: &acts, bindings: None };
        assert_eq!(detect_discrepancy(o, DetectorKind::MarkerParse).as_deref(), Some("the count looks off."));
        let o = Observation { actions: &acts[..1], ..o };
        assert_eq!(detect_discrepancy(o, DetectorKind::MarkerParse), None);
    }
}
