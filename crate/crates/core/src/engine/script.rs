//! Scripted policies: ordered branches keyed on the query text and on the
//! latest event in the prompt's history.

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::backend::{BackendError, Policy};
use crate::error::{Error, Result};
use crate::model::ActionKind;
use crate::protocol::parse_prompt;

/// When a branch fires.
#[derive(Debug, Clone)]
pub enum Trigger {
    /// Empty history.
    Start,
    /// Latest block is a non-error result.
    Success,
    /// Latest block is an error result.
    Error,
    /// Latest block is a Traceback result or a Rethink thought, and the
    /// failure level (max of rethinks and error results so far) equals `n`.
    Failure(usize),
    /// Latest block is a plain (non-Rethink) thought.
    Thought,
    /// Latest block is a result whose payload matches the pattern.
    Result(Regex),
    Always,
}

impl FromStr for Trigger {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "start" => Trigger::Start,
            "success" => Trigger::Success,
            "error" => Trigger::Error,
            "thought" => Trigger::Thought,
            "always" => Trigger::Always,
            _ => {
                if let Some(n) = s.strip_prefix("failure:") {
                    Trigger::Failure(n.parse().map_err(|_| Error::Config(format!("bad failure level in {s:?}")))?)
                } else if let Some(re) = s.strip_prefix("result:") {
                    Trigger::Result(Regex::new(re).map_err(|e| Error::Config(format!("trigger {s:?}: {e}")))?)
                } else {
                    return Err(Error::Config(format!("unknown trigger {s:?}")));
                }
            }
        })
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Start => f.write_str("start"),
            Trigger::Success => f.write_str("success"),
            Trigger::Error => f.write_str("error"),
            Trigger::Failure(n) => write!(f, "failure:{n}"),
            Trigger::Thought => f.write_str("thought"),
            Trigger::Result(re) => write!(f, "result:{}", re.as_str()),
            Trigger::Always => f.write_str("always"),
        }
    }
}

/// A regex stored by its source text.
#[derive(Debug, Clone)]
pub struct Pattern(pub Regex);

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.0.as_str())
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Regex::new(&s).map(Pattern).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Trigger {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Trigger {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    /// Matched against the prompt's question; captures feed `$1`, `$2`, ...
    pub query: Pattern,
    pub on: Trigger,
    /// Raw turn text with capture references.
    pub turn: String,
}

impl Branch {
    pub fn new(query: &str, on: &str, turn: &str) -> Result<Self> {
        Ok(Self {
            query: Pattern(Regex::new(query).map_err(|e| Error::Config(format!("query pattern {query:?}: {e}")))?),
            on: on.parse()?,
            turn: turn.to_string(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    pub branches: Vec<Branch>,
}

enum Event<'a> {
    Start,
    Result { payload: &'a str, is_error: bool },
    Rethink,
    Thought,
    Done,
}

impl Script {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("script: {e}")))
    }

    /// Scripted counterpart of one policy draw.
    pub fn respond(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        let view = parse_prompt(prompt).map_err(|e| BackendError::ScriptExhausted(format!("unreadable history: {e}")))?;
        let rethinks = view.history.iter().filter(|s| s.action.is_rethink).count();
        let errors = view.history.iter().filter(|s| s.feedback.as_ref().is_some_and(|f| f.is_error)).count();
        let level = rethinks.max(errors);
        let event = match view.history.last() {
            None => Event::Start,
            Some(step) => match (&step.action.kind, &step.feedback) {
                (ActionKind::Code, Some(fb)) => Event::Result { payload: &fb.payload, is_error: fb.is_error },
                (ActionKind::Code, None) => Event::Result { payload: "", is_error: false },
                (ActionKind::Thought, _) if step.action.is_rethink => Event::Rethink,
                (ActionKind::Thought, _) => Event::Thought,
                (ActionKind::Done, _) => Event::Done,
            },
        };
        for branch in &self.branches {
            let Some(caps) = branch.query.0.captures(&view.query) else { continue };
            let fires = match (&branch.on, &event) {
                (Trigger::Always, e) => !matches!(e, Event::Done),
                (Trigger::Start, Event::Start) => true,
                (Trigger::Success, Event::Result { is_error: false, .. }) => true,
                (Trigger::Error, Event::Result { is_error: true, .. }) => true,
                (Trigger::Failure(n), Event::Result { is_error: true, .. } | Event::Rethink) => *n == level,
                (Trigger::Thought, Event::Thought) => true,
                (Trigger::Result(re), Event::Result { payload, .. }) => re.is_match(payload),
                _ => false,
            };
            if fires {
                let mut out = String::new();
                caps.expand(&branch.turn, &mut out);
                return Ok(out);
            }
        }
        Err(BackendError::ScriptExhausted(format!(
            "no branch for {:?} after {} steps (failure level {level})",
            view.query,
            view.history.len()
        )))
    }

    /// Policy that answers every generated task kind with one tool program
    /// and stops; it has no recovery branches.
    pub fn optimal() -> Self {
        Self::builtin(false)
    }

    /// Like [`Script::optimal`], plus three alternative tool paths reached on
    /// successive failures (Traceback results or Rethink thoughts).
    pub fn with_fallbacks() -> Self {
        Self::builtin(true)
    }

    /// [`Script::with_fallbacks`] that also writes its own Rethink thought
    /// after a Traceback, for marker-parsing detection.
    pub fn self_reflecting() -> Self {
        let mut s = Self::with_fallbacks();
        s.branches.insert(
            0,
            Branch::new(
                ".*",
                "error",
                "<thought>Rethink: the last tool call failed. Discrepancy: the call raised instead of returning a value. Next: switch to an alternative tool.</thought>",
            )
            .expect("static branch"),
        );
        s
    }

    fn builtin(fallbacks: bool) -> Self {
        let colors = r#"["red", "blue", "green", "yellow", "black", "white"]"#;
        let sizes = r#"["small", "large"]"#;
        let mut plans: Vec<(String, [String; 4])> = vec![
            (
                r"^How many ([a-z]+)s are there\?$".into(),
                [
                    r#"final_answer = count(find("${1}"))"#.into(),
                    r#"final_answer = simple_query("How many ${1}s are there?")"#.into(),
                    r#"final_answer = count(image.find("${1}"))"#.into(),
                    r#"final_answer = image.simple_query("How many ${1}s are there?")"#.into(),
                ],
            ),
            (
                r"^Is there a ([a-z]+)\?$".into(),
                [
                    r#"final_answer = bool_to_yesno(exists("${1}"))"#.into(),
                    r#"final_answer = bool_to_yesno(count(find("${1}")) > 0)"#.into(),
                    r#"final_answer = simple_query("Is there a ${1}?")"#.into(),
                    r#"final_answer = bool_to_yesno(image.exists("${1}"))"#.into(),
                ],
            ),
            (
                r"^Are there more ([a-z]+)s than ([a-z]+)s\?$".into(),
                [
                    r#"final_answer = bool_to_yesno(count(find("${1}")) > count(find("${2}")))"#.into(),
                    r#"final_answer = simple_query("Are there more ${1}s than ${2}s?")"#.into(),
                    r#"final_answer = bool_to_yesno(count(image.find("${1}")) > count(image.find("${2}")))"#.into(),
                    r#"final_answer = image.simple_query("Are there more ${1}s than ${2}s?")"#.into(),
                ],
            ),
        ];
        for (attr, options) in [("color", colors), ("size", sizes)] {
            plans.push((
                format!(r"^What {attr} is the ([a-z]+)\?$"),
                [
                    format!(r#"final_answer = best_description_from_options("${{1}}", {options})"#),
                    format!(r#"final_answer = simple_query("What {attr} is the ${{1}}?")"#),
                    format!(r#"final_answer = image.best_description_from_options("${{1}}", {options})"#),
                    format!(r#"final_answer = image.simple_query("What {attr} is the ${{1}}?")"#),
                ],
            ));
        }
        for (phrase, crop) in [
            ("to the left of", "crop_left_of_bbox"),
            ("to the right of", "crop_right_of_bbox"),
            ("above", "crop_above_bbox"),
            ("below", "crop_below_bbox"),
        ] {
            plans.push((
                format!(r"^Is there a ([a-z]+) {phrase} the ([a-z]+)\?$"),
                [
                    format!(r#"final_answer = bool_to_yesno({crop}(find("${{2}}")).exists("${{1}}"))"#),
                    format!(r#"final_answer = simple_query("Is there a ${{1}} {phrase} the ${{2}}?")"#),
                    format!(r#"final_answer = bool_to_yesno(count({crop}(image.find("${{2}}")).find("${{1}}")) > 0)"#),
                    format!(r#"final_answer = image.simple_query("Is there a ${{1}} {phrase} the ${{2}}?")"#),
                ],
            ));
        }
        plans.push((
            r"^What ([a-z]+) is the ([a-z]+)\?$".into(),
            [
                r#"final_answer = simple_query("What ${1} is the ${2}?")"#.into(),
                r#"final_answer = image.simple_query("What ${1} is the ${2}?")"#.into(),
                r#"final_answer = simple_query("What ${1} is the ${2}?")"#.into(),
                r#"final_answer = image.simple_query("What ${1} is the ${2}?")"#.into(),
            ],
        ));

        let code = |body: &str| format!("<code>```\n{body}\n```</code>");
        let mut branches = Vec::new();
        for (query, programs) in &plans {
            branches.push(Branch::new(query, "start", &code(&programs[0])).expect("static branch"));
            if fallbacks {
                for (level, program) in programs.iter().enumerate().skip(1) {
                    branches.push(Branch::new(query, &format!("failure:{level}"), &code(program)).expect("static branch"));
                }
            }
        }
        branches.push(Branch::new(".*", "success", "<done></done>").expect("static branch"));
        Self { branches }
    }
}

impl Policy for Script {
    fn next_action(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        self.respond(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, EnvState, Feedback, Step, Task};
    use crate::protocol::{render_prompt, PromptMode};

    fn prompt(history: &[Step]) -> String {
        let task = Task::new("t", "s", "How many chairs are there?", "2").unwrap();
        render_prompt(&EnvState::new(task, "docs"), history, PromptMode::Standard)
    }

    fn code_step(i: usize, payload: &str) -> Step {
        Step { action: Action::code("x").at(i), feedback: Some(Feedback::new(i, payload)) }
    }

    #[test]
    fn optimal_counting_first_turn() {
        let turn = Script::optimal().respond(&prompt(&[])).unwrap();
        assert_eq!(turn, "<code>```\nfinal_answer = count(find(\"chair\"))\n```</code>");
    }

    #[test]
    fn fallback_after_error_and_rethink() {
        let s = Script::with_fallbacks();
        let err = code_step(1, "Traceback (most recent call last):\n  Line 1, in <cell>\nToolError: x");
        let turn = s.respond(&prompt(std::slice::from_ref(&err))).unwrap();
        assert!(turn.contains("simple_query(\"How many chairs are there?\")"), "{turn}");

        let rethink = Step { action: Action::rethink("count 0 contradicts 2.", "retry.").at(2), feedback: None };
        let turn = s.respond(&prompt(&[code_step(1, ""), rethink.clone()])).unwrap();
        assert!(turn.contains("simple_query"));
        // the rethink that follows a traceback does not raise the level twice
        let turn = s.respond(&prompt(&[err, rethink])).unwrap();
        assert!(turn.contains("simple_query"));
    }

    #[test]
    fn success_leads_to_done_and_exhaustion_is_reported() {
        let s = Script::optimal();
        assert_eq!(s.respond(&prompt(&[code_step(1, "")])).unwrap(), "<done></done>");
        let err = code_step(1, "Traceback (most recent call last):\nToolError: x");
        assert!(matches!(s.respond(&prompt(&[err])), Err(BackendError::ScriptExhausted(_))));
    }

    #[test]
    fn toml_scripts() {
        let s = Script::from_toml(
            r#"
            [[branches]]
            query = "^How many ([a-z]+)s"
            on = "start"
            turn = "<thought>counting $1</thought>"

            [[branches]]
            query = ".*"
            on = "result:^3$"
            turn = "<done></done>"
            "#,
        )
        .unwrap();
        assert_eq!(s.respond(&prompt(&[])).unwrap(), "<thought>counting chair</thought>");
        assert_eq!(s.respond(&prompt(&[code_step(1, "3")])).unwrap(), "<done></done>");
        assert!(Script::from_toml("[[branches]]\nquery='x'\non='sometimes'\nturn=''").is_err());
    }
}
