//! Restricted tool-call language executed by Code actions.
//!
//! Programs are lines of assignments and expressions over a fixed builtin set
//! that mirrors an image-patch API. Every builtin that perceives the scene is
//! served by the simulated tools; all runtime faults come back as Traceback
//! feedback rather than errors.

mod docs;
mod interp;
mod parse;

pub use docs::builtin_docs;
pub use interp::{evaluate, run_code, traceback, Bindings, Fault, FINAL_ANSWER_VAR, IMAGE_VAR};
pub use parse::{parse_program, Builtin, CmpOp, DslError, Expr, Line, Literal, Program, Statement};
