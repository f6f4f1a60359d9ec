//! Tag protocol between policy backends and the engine.
//!
//! A policy turn is exactly one of `<thought>…</thought>`, `<code>` wrapping a
//! triple-backtick fence, or `<done></done>`. Tool output travels back as
//! `<result>…</result>` with the closing tag entity-escaped inside payloads.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{is_rethink_text, Action, ActionKind, EnvState, Feedback, Step, Workflow};

const ACTION_TAGS: [&str; 3] = ["thought", "code", "done"];
const FENCE: &str = "```";

/// First line of the answer-disclosure block in answer-conditioned prompts.
pub const ANSWER_LINE_PREFIX: &str = "Known answer: ";
pub const QUERY_PREFIX: &str = "Question: ";
const HISTORY_HEADER: &str = "History:";

const RULES: [&str; 12] = [
    "When you want to run tool code, put it in triple backticks inside a `<code>` tag.",
    "When you want to reply with text, use the `<thought>` tag. Example: `<thought>I think this is the answer.</thought>`",
    "When you are finished, emit the `<done>` tag with nothing inside. Example: `<done></done>`",
    "Tool output is returned inside a `<result>` tag. Example: `<result>2</result>`",
    "The scene is preloaded in a variable named `image`; every tool can be called as a plain function or as a method of `image`.",
    "When you can answer with a single word or short phrase, store it in a variable named `final_answer`.",
    "Write more code whenever you need more information about the scene.",
    "Emit exactly one action per step.",
    "Keep one statement per line and work towards the answer step by step.",
    "Once `final_answer` holds the answer, finish with a `<done>` tag.",
    "Always give an answer, even when you are not completely sure.",
    "If `final_answer` is `True` or `False`, convert it with `bool_to_yesno` so it reads 'yes' or 'no'.",
];

/// Byte range of the offending text in a raw turn.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("no recognized tag at {0:?}")]
    NoTag(Span),
    #[error("more than one top-level tag; extra tag at {0:?}")]
    MultipleTags(Span),
    #[error("code tag without a complete backtick fence at {0:?}")]
    MalformedCode(Span),
    #[error("unexpected <result> before any code action at {0:?}")]
    OrphanResult(Span),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Standard,
    AnswerConditioned,
}

#[derive(Debug, Clone, Copy)]
struct TagSpan<'a> {
    name: &'a str,
    start: usize,
    inner: (usize, usize),
    end: usize,
}

/// Finds the top-level `<name>…</name>` blocks for the given names. Blocks do
/// not nest: a block runs to the first matching close tag.
fn scan_tags<'a>(text: &str, names: &[&'a str]) -> Result<Vec<TagSpan<'a>>, ProtocolError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let next = names
            .iter()
            .filter_map(|&name| text[pos..].find(&format!("<{name}>")).map(|i| (pos + i, name)))
            .min_by_key(|&(i, _)| i);
        let Some((start, name)) = next else { break };
        let inner_start = start + name.len() + 2;
        let close = format!("</{name}>");
        let Some(rel) = text[inner_start..].find(&close) else {
            let span = (start, text.len());
            return Err(if name == "code" {
                ProtocolError::MalformedCode(span)
            } else {
                ProtocolError::NoTag(span)
            });
        };
        let inner_end = inner_start + rel;
        let end = inner_end + close.len();
        out.push(TagSpan { name, start, inner: (inner_start, inner_end), end });
        pos = end;
    }
    Ok(out)
}

fn code_body(inner: &str) -> Option<&str> {
    let open = inner.find(FENCE)?;
    let after = open + FENCE.len();
    let close = after + inner[after..].rfind(FENCE)?;
    let mut body = &inner[after..close];
    // An identifier on the fence line is a language tag.
    if let Some(nl) = body.find('\n') {
        let first = body[..nl].trim();
        if first.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            body = &body[nl + 1..];
        }
    }
    Some(body.trim())
}

fn action_from_tag(text: &str, tag: &TagSpan<'_>) -> Result<Action, ProtocolError> {
    let inner = &text[tag.inner.0..tag.inner.1];
    match tag.name {
        "thought" => {
            let content = inner.trim().to_string();
            let is_rethink = is_rethink_text(&content);
            Ok(Action { index: 0, kind: ActionKind::Thought, content, is_rethink })
        }
        "code" => code_body(inner)
            .map(Action::code)
            .ok_or(ProtocolError::MalformedCode((tag.start, tag.end))),
        _ => Ok(Action::done()),
    }
}

/// Parses one raw policy turn. The returned action has index 0; the engine
/// assigns its position.
pub fn parse_action(raw: &str) -> Result<Action, ProtocolError> {
    let tags = scan_tags(raw, &ACTION_TAGS)?;
    match tags.as_slice() {
        [] => Err(ProtocolError::NoTag((0, raw.len()))),
        [tag] => action_from_tag(raw, tag),
        [_, extra, ..] => Err(ProtocolError::MultipleTags((extra.start, extra.end))),
    }
}

pub fn render_action(action: &Action) -> String {
    match action.kind {
        ActionKind::Thought => format!("<thought>{}</thought>", action.content),
        ActionKind::Code => format!("<code>{FENCE}\n{}\n{FENCE}</code>", action.content),
        ActionKind::Done => "<done></done>".to_string(),
    }
}

pub fn escape_payload(payload: &str) -> String {
    payload.replace('&', "&amp;").replace("</result>", "&lt;/result>")
}

pub fn unescape_payload(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut rest = escaped;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        if let Some(tail) = rest.strip_prefix("&amp;") {
            out.push('&');
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("&lt;") {
            out.push('<');
            rest = tail;
        } else {
            out.push('&');
            rest = &rest[1..];
        }
    }
    out.push_str(rest);
    out
}

pub fn render_feedback(feedback: &Feedback) -> String {
    format!("<result>{}</result>", escape_payload(&feedback.payload))
}

fn render_steps(steps: &[Step], out: &mut String) {
    for step in steps {
        out.push_str(&render_action(&step.action));
        out.push('\n');
        if let Some(fb) = &step.feedback {
            out.push_str(&render_feedback(fb));
            out.push('\n');
        }
    }
}

/// Renders a sequence of steps as a transcript, one block per line.
pub fn render_transcript(steps: &[Step]) -> String {
    let mut out = String::new();
    render_steps(steps, &mut out);
    out
}

/// Canonical transcript of a workflow.
pub fn render_workflow(workflow: &Workflow) -> String {
    render_transcript(&workflow.steps())
}

/// Parses a transcript back into steps, numbering actions from 1 and
/// attaching each result block to the code action before it.
pub fn parse_transcript(text: &str) -> Result<Vec<Step>, ProtocolError> {
    let tags = scan_tags(text, &["thought", "code", "done", "result"])?;
    let mut steps: Vec<Step> = Vec::new();
    for tag in &tags {
        if tag.name == "result" {
            let payload = unescape_payload(&text[tag.inner.0..tag.inner.1]);
            match steps.last_mut() {
                Some(step) if step.action.kind == ActionKind::Code && step.feedback.is_none() => {
                    step.feedback = Some(Feedback::new(step.action.index, payload));
                }
                _ => return Err(ProtocolError::OrphanResult((tag.start, tag.end))),
            }
        } else {
            let action = action_from_tag(text, tag)?.at(steps.len() + 1);
            steps.push(Step { action, feedback: None });
        }
    }
    Ok(steps)
}

/// Extra prompt assembly knobs.
#[derive(Debug, Clone, Default)]
pub struct PromptOptions {
    /// Rendered in-context example transcripts; empty means zero-shot.
    pub examples: Vec<String>,
}

pub fn render_prompt(env: &EnvState, history: &[Step], mode: PromptMode) -> String {
    render_prompt_with(env, history, mode, &PromptOptions::default())
}

pub fn render_prompt_with(
    env: &EnvState,
    history: &[Step],
    mode: PromptMode,
    options: &PromptOptions,
) -> String {
    debug_assert!(history.iter().enumerate().all(|(i, s)| s.action.index == i + 1));
    let mut out = String::from(
        "Your job is to answer questions about a scene by calling the tools below.\n\
         Format every response according to these rules.\n\n",
    );
    for (i, rule) in RULES.iter().enumerate() {
        let _ = writeln!(out, "{}. {rule}", i + 1);
    }
    out.push_str("\nTools:\n");
    out.push_str(env.tool_docs().trim_end());
    out.push('\n');
    for (i, example) in options.examples.iter().enumerate() {
        let _ = write!(out, "\nExample {}:\n{}\n", i + 1, example.trim_end());
    }
    let _ = write!(out, "\n{QUERY_PREFIX}{}\n", env.task().query);
    if mode == PromptMode::AnswerConditioned {
        let _ = writeln!(out, "{ANSWER_LINE_PREFIX}{}", env.task().answer);
        out.push_str(
            "Check every tool result against the known answer. If a result contradicts it, reply \
             with a <thought> of the form \"Discrepancy: <what disagrees> Next: <alternative step>\" \
             before continuing.\n",
        );
    }
    let _ = write!(out, "\n{HISTORY_HEADER}\n");
    render_steps(history, &mut out);
    out
}

/// What a backend can recover from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptView {
    pub query: String,
    pub known_answer: Option<String>,
    pub history: Vec<Step>,
}

pub fn parse_prompt(prompt: &str) -> Result<PromptView, ProtocolError> {
    let (head, history) = match prompt.rfind(&format!("\n{HISTORY_HEADER}\n")) {
        Some(i) => (&prompt[..i], &prompt[i + HISTORY_HEADER.len() + 2..]),
        None => (prompt, ""),
    };
    let line_after = |prefix: &str| {
        head.lines().rev().find_map(|l| l.strip_prefix(prefix)).map(str::to_string)
    };
    Ok(PromptView {
        query: line_after(QUERY_PREFIX).unwrap_or_default(),
        known_answer: line_after(ANSWER_LINE_PREFIX),
        history: parse_transcript(history)?,
    })
}
