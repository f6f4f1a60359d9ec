//! Line-oriented parser for tool programs. The grammar is in `docs/dsl.ebnf`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Find,
    Exists,
    VerifyProperty,
    BestDescriptionFromOptions,
    SimpleQuery,
    LlmQuery,
    CropLeftOfBbox,
    CropRightOfBbox,
    CropAboveBbox,
    CropBelowBbox,
    BoolToYesno,
    Count,
}

impl Builtin {
    pub const ALL: [Builtin; 12] = [
        Builtin::Find,
        Builtin::Exists,
        Builtin::VerifyProperty,
        Builtin::BestDescriptionFromOptions,
        Builtin::SimpleQuery,
        Builtin::LlmQuery,
        Builtin::CropLeftOfBbox,
        Builtin::CropRightOfBbox,
        Builtin::CropAboveBbox,
        Builtin::CropBelowBbox,
        Builtin::BoolToYesno,
        Builtin::Count,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Find => "find",
            Builtin::Exists => "exists",
            Builtin::VerifyProperty => "verify_property",
            Builtin::BestDescriptionFromOptions => "best_description_from_options",
            Builtin::SimpleQuery => "simple_query",
            Builtin::LlmQuery => "llm_query",
            Builtin::CropLeftOfBbox => "crop_left_of_bbox",
            Builtin::CropRightOfBbox => "crop_right_of_bbox",
            Builtin::CropAboveBbox => "crop_above_bbox",
            Builtin::CropBelowBbox => "crop_below_bbox",
            Builtin::BoolToYesno => "bool_to_yesno",
            Builtin::Count => "count",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }

    /// Image-patch methods can be called on a receiver; helpers cannot.
    pub fn is_method(self) -> bool {
        !matches!(self, Builtin::BoolToYesno | Builtin::Count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    Str(String),
    Int(i64),
    Bool(bool),
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Call { receiver: Option<Box<Expr>>, builtin: Builtin, args: Vec<Expr> },
    Literal(Literal),
    Var(String),
    List(Vec<Expr>),
    Compare { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn call(builtin: Builtin, args: Vec<Expr>) -> Expr {
        Expr::Call { receiver: None, builtin, args }
    }

    pub fn str(s: &str) -> Expr {
        Expr::Literal(Literal::Str(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Assign { name: String, expr: Expr },
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    /// 1-based source line.
    pub line: usize,
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub statements: Vec<Line>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("SyntaxError: {message} (line {line}, column {column})")]
    Syntax { line: usize, column: usize, message: String },
    #[error("UnknownBuiltin: {name}")]
    UnknownBuiltin { name: String, line: usize, column: usize },
}

impl DslError {
    pub fn line(&self) -> usize {
        match self {
            DslError::Syntax { line, .. } | DslError::UnknownBuiltin { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Assign,
    Cmp(CmpOp),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "name {s:?}"),
            Tok::Str(_) => f.write_str("string literal"),
            Tok::Int(n) => write!(f, "number {n}"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::LBracket => f.write_str("'['"),
            Tok::RBracket => f.write_str("']'"),
            Tok::Comma => f.write_str("','"),
            Tok::Dot => f.write_str("'.'"),
            Tok::Assign => f.write_str("'='"),
            Tok::Cmp(op) => write!(f, "'{}'", op.symbol()),
            Tok::End => f.write_str("end of line"),
        }
    }
}

fn lex_line(src: &str, line: usize) -> Result<Vec<(Tok, usize)>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |col: usize, message: String| DslError::Syntax { line, column: col + 1, message };
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                continue;
            }
            '#' => break,
            '(' | ')' | '[' | ']' | ',' | '.' => {
                toks.push((
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        ',' => Tok::Comma,
                        _ => Tok::Dot,
                    },
                    start,
                ));
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let next_eq = chars.get(i + 1) == Some(&'=');
                let tok = match (c, next_eq) {
                    ('=', true) => Tok::Cmp(CmpOp::Eq),
                    ('=', false) => Tok::Assign,
                    ('!', true) => Tok::Cmp(CmpOp::Ne),
                    ('!', false) => return Err(err(start, "unexpected character '!'".into())),
                    ('<', true) => Tok::Cmp(CmpOp::Le),
                    ('<', false) => Tok::Cmp(CmpOp::Lt),
                    ('>', true) => Tok::Cmp(CmpOp::Ge),
                    _ => Tok::Cmp(CmpOp::Gt),
                };
                i += if next_eq { 2 } else { 1 };
                toks.push((tok, start));
            }
            '"' | '\'' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(start, "unterminated string literal".into())),
                        Some(&ch) if ch == quote => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = chars.get(i + 1).ok_or_else(|| err(i, "dangling escape".into()))?;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => *other,
                            });
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                toks.push((Tok::Str(s), start));
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                i += 1;
                while chars.get(i).is_some_and(char::is_ascii_digit) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse().map_err(|_| err(start, format!("integer {text} out of range")))?;
                toks.push((Tok::Int(n), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while chars.get(i).is_some_and(|ch| ch.is_ascii_alphanumeric() || *ch == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), start));
            }
            other => return Err(err(start, format!("unexpected character {other:?}"))),
        }
    }
    toks.push((Tok::End, chars.len()));
    Ok(toks)
}

struct LineParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
}

impl LineParser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1 + 1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: String) -> Result<T, DslError> {
        Err(DslError::Syntax { line: self.line, column: self.col(), message })
    }

    fn expect(&mut self, tok: Tok) -> Result<(), DslError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {tok}, found {}", self.peek()))
        }
    }

    fn statement(&mut self) -> Result<Statement, DslError> {
        let is_assign = matches!(self.peek(), Tok::Ident(_)) && self.toks.get(self.pos + 1).map(|t| &t.0) == Some(&Tok::Assign);
        let stmt = if is_assign {
            let Tok::Ident(name) = self.bump() else { unreachable!() };
            if matches!(name.as_str(), "True" | "False" | "None") || Builtin::from_name(&name).is_some() {
                return Err(DslError::Syntax { line: self.line, column: self.toks[self.pos - 1].1 + 1, message: format!("cannot assign to {name}") });
            }
            self.bump();
            Statement::Assign { name, expr: self.expr()? }
        } else {
            Statement::Expr(self.expr()?)
        };
        if *self.peek() != Tok::End {
            return self.error(format!("unexpected {} after statement", self.peek()));
        }
        Ok(stmt)
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let lhs = self.postfix()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.postfix()?;
            if matches!(self.peek(), Tok::Cmp(_)) {
                return self.error("chained comparisons are not supported".into());
            }
            return Ok(Expr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn args(&mut self, close: Tok) -> Result<Vec<Expr>, DslError> {
        let mut args = Vec::new();
        if *self.peek() == close {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.bump() {
                Tok::Comma if *self.peek() == close => {
                    self.bump();
                    return Ok(args);
                }
                Tok::Comma => continue,
                t if t == close => return Ok(args),
                t => {
                    self.pos -= 1;
                    return self.error(format!("expected ',' or {close}, found {t}"));
                }
            }
        }
    }

    fn postfix(&mut self) -> Result<Expr, DslError> {
        let mut expr = self.primary()?;
        while *self.peek() == Tok::Dot {
            self.bump();
            let col = self.col();
            let Tok::Ident(name) = self.bump() else {
                return self.error("expected method name after '.'".into());
            };
            let builtin = Builtin::from_name(&name)
                .filter(|b| b.is_method())
                .ok_or(DslError::UnknownBuiltin { name, line: self.line, column: col })?;
            self.expect(Tok::LParen)?;
            let args = self.args(Tok::RParen)?;
            expr = Expr::Call { receiver: Some(Box::new(expr)), builtin, args };
        }
        Ok(expr)
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let col = self.col();
        match self.bump() {
            Tok::Str(s) => Ok(Expr::Literal(Literal::Str(s))),
            Tok::Int(n) => Ok(Expr::Literal(Literal::Int(n))),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => Ok(Expr::List(self.args(Tok::RBracket)?)),
            Tok::Ident(name) => match name.as_str() {
                "True" => Ok(Expr::Literal(Literal::Bool(true))),
                "False" => Ok(Expr::Literal(Literal::Bool(false))),
                "None" => Ok(Expr::Literal(Literal::None)),
                _ if *self.peek() == Tok::LParen => {
                    let builtin = Builtin::from_name(&name).ok_or(DslError::UnknownBuiltin { name, line: self.line, column: col })?;
                    self.bump();
                    Ok(Expr::call(builtin, self.args(Tok::RParen)?))
                }
                _ => Ok(Expr::Var(name)),
            },
            t => {
                self.pos -= usize::from(t != Tok::End);
                self.error(format!("unexpected {t}"))
            }
        }
    }
}

/// Parses a whole program; any line outside the grammar is an error.
pub fn parse_program(source: &str) -> Result<Program, DslError> {
    let mut statements = Vec::new();
    for (i, text) in source.lines().enumerate() {
        let line = i + 1;
        let toks = lex_line(text, line)?;
        if toks.len() == 1 {
            continue;
        }
        let mut p = LineParser { toks, pos: 0, line };
        statements.push(Line { line, statement: p.statement()? });
    }
    Ok(Program { statements })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_of_call() {
        let p = parse_program("dogs = find(\"dog\")").unwrap();
        assert_eq!(
            p.statements,
            vec![Line {
                line: 1,
                statement: Statement::Assign { name: "dogs".into(), expr: Expr::call(Builtin::Find, vec![Expr::str("dog")]) }
            }]
        );
    }

    #[test]
    fn nested_calls() {
        let p = parse_program("final_answer = bool_to_yesno(exists(\"cat\"))").unwrap();
        let Statement::Assign { name, expr } = &p.statements[0].statement else { panic!() };
        assert_eq!(name, "final_answer");
        assert_eq!(expr, &Expr::call(Builtin::BoolToYesno, vec![Expr::call(Builtin::Exists, vec![Expr::str("cat")])]));
    }

    #[test]
    fn methods_lists_comparisons() {
        let src = "# count chairs left of the mug\n\
                   left = crop_left_of_bbox(find('mug'))\n\
                   n = count(left.find(\"chair\")) >= 2\n\
                   image.best_description_from_options(\"mug\", [\"red\", \"blue\",])\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.statements.len(), 3);
        assert_eq!(p.statements[0].line, 2);
        let Statement::Assign { expr: Expr::Compare { op, .. }, .. } = &p.statements[1].statement else { panic!() };
        assert_eq!(*op, CmpOp::Ge);
        let Statement::Expr(Expr::Call { receiver: Some(r), args, .. }) = &p.statements[2].statement else { panic!() };
        assert_eq!(**r, Expr::Var("image".into()));
        assert_eq!(args[1], Expr::List(vec![Expr::str("red"), Expr::str("blue")]));
    }

    #[test]
    fn rejects_outside_grammar() {
        assert!(matches!(parse_program("import os"), Err(DslError::Syntax { line: 1, column: 8, .. })));
        assert!(matches!(parse_program("x = 1\ny = (2"), Err(DslError::Syntax { line: 2, .. })));
        assert!(matches!(parse_program("x = 'open"), Err(DslError::Syntax { .. })));
        assert!(matches!(parse_program("1 < 2 < 3"), Err(DslError::Syntax { .. })));
        assert!(matches!(parse_program("count = 3"), Err(DslError::Syntax { .. })));
        assert_eq!(
            parse_program("foo()"),
            Err(DslError::UnknownBuiltin { name: "foo".into(), line: 1, column: 1 })
        );
        assert!(matches!(parse_program("image.count(x)"), Err(DslError::UnknownBuiltin { .. })));
    }

    #[test]
    fn blank_and_comment_lines_skipped() {
        assert_eq!(parse_program("\n  # nothing\n").unwrap(), Program::default());
    }
}
