use std::collections::BTreeMap;

use super::parse::{parse_program, Builtin, CmpOp, Expr, Literal, Program, Statement};
use crate::model::{Feedback, TRACEBACK_SENTINEL};
use crate::sim::{Relation, ToolCall, ToolSession};
use crate::value::{Region, Value};

/// Variable name the scene is bound to at the start of every episode.
pub const IMAGE_VAR: &str = "image";
/// Variable holding the agent's prediction.
pub const FINAL_ANSWER_VAR: &str = "final_answer";

/// Episode-scoped variables; persist across Code actions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Value>,
}

impl Bindings {
    /// Fresh bindings with `image` bound to the full scene.
    pub fn for_image(region: Region) -> Self {
        let mut b = Self::default();
        b.set(IMAGE_VAR, Value::Patch(region));
        b
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.vars.insert(name.to_string(), value);
    }

    pub fn final_answer(&self) -> Option<&Value> {
        self.get(FINAL_ANSWER_VAR)
    }
}

/// A runtime fault: exception class name and message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub kind: &'static str,
    pub message: String,
}

impl Fault {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    fn type_error(message: impl Into<String>) -> Self {
        Self::new("TypeError", message)
    }
}

/// Formats a fault as the agent sees it.
pub fn traceback(line: usize, kind: &str, message: &str) -> String {
    format!("{TRACEBACK_SENTINEL}\n  Line {line}, in <cell>\n{kind}: {message}")
}

struct Interp<'a> {
    bindings: &'a Bindings,
    session: &'a mut ToolSession,
}

impl Interp<'_> {
    fn eval(&mut self, expr: &Expr) -> Result<Value, Fault> {
        match expr {
            Expr::Literal(lit) => Ok(match lit {
                Literal::Str(s) => Value::Text(s.clone()),
                Literal::Int(n) => Value::Int(*n),
                Literal::Bool(b) => Value::Bool(*b),
                Literal::None => Value::None,
            }),
            Expr::Var(name) => self
                .bindings
                .get(name)
                .cloned()
                .ok_or_else(|| Fault::new("NameError", format!("name '{name}' is not defined"))),
            Expr::List(items) => Ok(Value::List(items.iter().map(|e| self.eval(e)).collect::<Result<_, _>>()?)),
            Expr::Compare { op, lhs, rhs } => {
                let (l, r) = (self.eval(lhs)?, self.eval(rhs)?);
                compare(*op, &l, &r)
            }
            Expr::Call { receiver, builtin, args } => {
                let region = match receiver {
                    None => self.session.scene().full_region(),
                    Some(r) => receiver_region(&self.eval(r)?, *builtin)?,
                };
                let args = args.iter().map(|e| self.eval(e)).collect::<Result<Vec<_>, _>>()?;
                self.call(*builtin, &region, args)
            }
        }
    }

    fn call(&mut self, builtin: Builtin, region: &Region, args: Vec<Value>) -> Result<Value, Fault> {
        let name = builtin.name();
        let tool_call = match builtin {
            Builtin::BoolToYesno => {
                return match one(name, args)? {
                    Value::Bool(b) => Ok(Value::Text(if b { "yes" } else { "no" }.to_string())),
                    other => Err(Fault::type_error(format!("{name}() expects a bool, got {}", other.type_name()))),
                };
            }
            Builtin::Count => {
                return match one(name, args)? {
                    Value::List(items) => Ok(Value::Int(items.len() as i64)),
                    other => Err(Fault::type_error(format!("{name}() expects a list, got {}", other.type_name()))),
                };
            }
            Builtin::Find => ToolCall::Find { name: text_arg(name, one(name, args)?)? },
            Builtin::Exists => ToolCall::Exists { name: text_arg(name, one(name, args)?)? },
            Builtin::VerifyProperty => {
                let [object, property] = exactly::<2>(name, args)?;
                ToolCall::VerifyProperty { name: text_arg(name, object)?, property: text_arg(name, property)? }
            }
            Builtin::BestDescriptionFromOptions => {
                let [object, options] = exactly::<2>(name, args)?;
                let Value::List(options) = options else {
                    return Err(Fault::type_error(format!("{name}() expects a list of options")));
                };
                let options = options.into_iter().map(|o| text_arg(name, o)).collect::<Result<_, _>>()?;
                ToolCall::BestDescription { name: text_arg(name, object)?, options }
            }
            Builtin::SimpleQuery => ToolCall::SimpleQuery { question: text_arg(name, one(name, args)?)? },
            Builtin::LlmQuery => ToolCall::LlmQuery { question: text_arg(name, one(name, args)?)? },
            Builtin::CropLeftOfBbox | Builtin::CropRightOfBbox | Builtin::CropAboveBbox | Builtin::CropBelowBbox => {
                let relation = match builtin {
                    Builtin::CropLeftOfBbox => Relation::Left,
                    Builtin::CropRightOfBbox => Relation::Right,
                    Builtin::CropAboveBbox => Relation::Above,
                    _ => Relation::Below,
                };
                ToolCall::Crop { relation, center2: crop_center(name, args)? }
            }
        };
        self.session
            .invoke(&tool_call, region)
            .map(|r| r.value)
            .map_err(|fault| match fault {
                crate::sim::ToolFault::Disabled(_) => Fault::new("ToolDisabled", format!("{name}() is not available")),
                crate::sim::ToolFault::Raised(tool) => Fault::new("ToolError", format!("{name}(): {tool} backend failed")),
            })
    }
}

fn receiver_region(value: &Value, builtin: Builtin) -> Result<Region, Fault> {
    match value {
        Value::Patch(r) => Ok(*r),
        Value::Object(o) => Ok(Region { x0: 2 * o.bbox.left, y0: 2 * o.bbox.top, x1: 2 * o.bbox.right, y1: 2 * o.bbox.bottom }),
        other => Err(Fault::new(
            "AttributeError",
            format!("'{}' object has no attribute '{}'", other.type_name(), builtin.name()),
        )),
    }
}

fn exactly<const N: usize>(name: &str, args: Vec<Value>) -> Result<[Value; N], Fault> {
    let got = args.len();
    args.try_into()
        .map_err(|_| Fault::type_error(format!("{name}() takes {N} argument(s) but {got} were given")))
}

fn one(name: &str, args: Vec<Value>) -> Result<Value, Fault> {
    let [v] = exactly::<1>(name, args)?;
    Ok(v)
}

fn text_arg(name: &str, v: Value) -> Result<String, Fault> {
    match v {
        Value::Text(s) => Ok(s),
        other => Err(Fault::type_error(format!("{name}() expects str arguments, got {}", other.type_name()))),
    }
}

/// Crop reference: four coordinates, one detection, or a detection list
/// (its first element).
fn crop_center(name: &str, args: Vec<Value>) -> Result<(i64, i64), Fault> {
    match args.as_slice() {
        [Value::Int(l), Value::Int(t), Value::Int(r), Value::Int(b)] => Ok((l + r, t + b)),
        [Value::Object(o)] => Ok(o.bbox.center2()),
        [Value::List(items)] => match items.first() {
            Some(Value::Object(o)) => Ok(o.bbox.center2()),
            Some(other) => Err(Fault::type_error(format!("{name}() expects detections, got {}", other.type_name()))),
            None => Err(Fault::new("IndexError", format!("{name}(): no detection to crop around"))),
        },
        _ => Err(Fault::type_error(format!("{name}() expects (left, upper, right, lower) or a detection"))),
    }
}

fn compare(op: CmpOp, l: &Value, r: &Value) -> Result<Value, Fault> {
    let ordered = |a: i64, b: i64| match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    };
    match (op, l, r) {
        (_, Value::Int(a), Value::Int(b)) => Ok(Value::Bool(ordered(*a, *b))),
        (CmpOp::Eq, a, b) => Ok(Value::Bool(a == b)),
        (CmpOp::Ne, a, b) => Ok(Value::Bool(a != b)),
        (_, a, b) => Err(Fault::type_error(format!(
            "ordering not supported between {} and {}",
            a.type_name(),
            b.type_name()
        ))),
    }
}

/// Runs a parsed program. Statements execute in order; the first fault stops
/// execution and leaves the bindings as they were before that statement.
pub fn evaluate(program: &Program, bindings: &mut Bindings, session: &mut ToolSession, step_index: usize) -> Feedback {
    let mut last = None;
    for line in &program.statements {
        let mut interp = Interp { bindings, session };
        let result = match &line.statement {
            Statement::Assign { name, expr } => interp.eval(expr).map(|v| (Some(name), v)),
            Statement::Expr(expr) => interp.eval(expr).map(|v| (None, v)),
        };
        match result {
            Ok((Some(name), value)) => {
                bindings.set(name, value);
                last = None;
            }
            Ok((None, value)) => last = Some(value),
            Err(fault) => return Feedback::new(step_index, traceback(line.line, fault.kind, &fault.message)),
        }
    }
    Feedback::new(step_index, last.map(|v| v.to_string()).unwrap_or_default())
}

/// Parses and runs Code-action content; parse errors become error feedback.
pub fn run_code(source: &str, bindings: &mut Bindings, session: &mut ToolSession, step_index: usize) -> Feedback {
    match parse_program(source) {
        Ok(program) => evaluate(&program, bindings, session, step_index),
        Err(e) => {
            let text = e.to_string();
            let (kind, message) = text.split_once(": ").unwrap_or(("SyntaxError", &text));
            Feedback::new(step_index, traceback(e.line(), kind, message))
        }
    }
}
