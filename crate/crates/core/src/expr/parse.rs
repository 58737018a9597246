//! Lexer and recursive-descent parser.
//!
//! ```text
//! expert := "if" pred "then" expr "else" "0"
//! pred   := "true" | clause ("and" clause)*
//! clause := feature cmp atom
//! atom   := ["-"] number | param
//! cmp    := "<" | "<=" | ">" | ">="
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := number | param | feature | fn "(" expr ("," expr)* ")"
//!         | "(" expr ")" | "-" factor
//! param  := "p{" name "=" number [",frozen"] "}"
//! ```
//!
//! Features are backquoted column names. A `-` directly before a number
//! literal folds into the literal.

use super::ast::*;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical(String),
    Syntax(String),
    UnknownFeature(String),
    UnknownFunction(String),
    Arity {
        function: String,
        expected: usize,
        got: usize,
    },
    DuplicateParam(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Lexical(m) => write!(f, "lexical error: {m}"),
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownFeature(n) => write!(f, "unknown feature `{n}`"),
            ParseErrorKind::UnknownFunction(n) => write!(f, "unknown function `{n}`"),
            ParseErrorKind::Arity { function, expected, got } => {
                write!(f, "function `{function}` takes {expected} argument(s), got {got}")
            }
            ParseErrorKind::DuplicateParam(n) => write!(f, "duplicate parameter name `{n}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    If,
    Then,
    Else,
    And,
    True,
    Ident(String),
    Num(f64),
    Feature(String),
    Param { name: String, value: f64, frozen: bool },
    Cmp(Cmp),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::If => "`if`".into(),
            Tok::Then => "`then`".into(),
            Tok::Else => "`else`".into(),
            Tok::And => "`and`".into(),
            Tok::True => "`true`".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Feature(s) => format!("feature `{s}`"),
            Tok::Param { name, .. } => format!("parameter `{name}`"),
            Tok::Cmp(c) => format!("`{}`", c.symbol()),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn err(&self, line: usize, column: usize, msg: impl Into<String>) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Lexical(msg.into()),
            line,
            column,
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn number(&mut self, line: usize, column: usize) -> Result<f64, ParseError> {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '.' {
                s.push(c);
                self.bump();
            } else if c == 'e' || c == 'E' {
                s.push(c);
                self.bump();
                if let Some(sign @ ('+' | '-')) = self.peek() {
                    s.push(sign);
                    self.bump();
                }
            } else {
                break;
            }
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(line, column, format!("malformed number `{s}`")))
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn param(&mut self, line: usize, column: usize) -> Result<Tok, ParseError> {
        // "p{" already consumed
        self.skip_ws();
        let name = self.ident();
        if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
            return Err(self.err(line, column, "parameter needs a name: p{name=value}"));
        }
        self.skip_ws();
        if self.bump() != Some('=') {
            return Err(self.err(line, column, format!("expected `=` after parameter name `{name}`")));
        }
        self.skip_ws();
        let negative = if self.peek() == Some('-') {
            self.bump();
            true
        } else {
            false
        };
        if !self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
            return Err(self.err(line, column, format!("parameter `{name}` needs a numeric value")));
        }
        let v = self.number(line, column)?;
        let value = if negative { -v } else { v };
        self.skip_ws();
        let mut frozen = false;
        if self.peek() == Some(',') {
            self.bump();
            self.skip_ws();
            let flag = self.ident();
            if flag != "frozen" {
                return Err(self.err(line, column, format!("unknown parameter flag `{flag}`")));
            }
            frozen = true;
            self.skip_ws();
        }
        if self.bump() != Some('}') {
            return Err(self.err(line, column, format!("unterminated parameter `{name}`")));
        }
        Ok(Tok::Param { name, value, frozen })
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            let (line, column) = (self.line, self.column);
            let Some(c) = self.peek() else {
                out.push(Spanned { tok: Tok::Eof, line, column });
                return Ok(out);
            };
            let tok = match c {
                '0'..='9' | '.' => Tok::Num(self.number(line, column)?),
                '`' => {
                    self.bump();
                    let mut name = String::new();
                    loop {
                        match self.bump() {
                            Some('`') => break,
                            Some('\n') | None => {
                                return Err(self.err(line, column, "unterminated feature name"))
                            }
                            Some(ch) => name.push(ch),
                        }
                    }
                    Tok::Feature(name)
                }
                '<' | '>' => {
                    self.bump();
                    let eq = self.peek() == Some('=');
                    if eq {
                        self.bump();
                    }
                    Tok::Cmp(match (c, eq) {
                        ('<', false) => Cmp::Lt,
                        ('<', true) => Cmp::Le,
                        ('>', false) => Cmp::Gt,
                        _ => Cmp::Ge,
                    })
                }
                '+' | '-' | '*' | '/' | '(' | ')' | ',' => {
                    self.bump();
                    match c {
                        '+' => Tok::Plus,
                        '-' => Tok::Minus,
                        '*' => Tok::Star,
                        '/' => Tok::Slash,
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        _ => Tok::Comma,
                    }
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let word = self.ident();
                    if word == "p" && self.peek() == Some('{') {
                        self.bump();
                        self.param(line, column)?
                    } else {
                        match word.as_str() {
                            "if" => Tok::If,
                            "then" => Tok::Then,
                            "else" => Tok::Else,
                            "and" => Tok::And,
                            "true" => Tok::True,
                            _ => Tok::Ident(word),
                        }
                    }
                }
                other => return Err(self.err(line, column, format!("unexpected character `{other}`"))),
            };
            out.push(Spanned { tok, line, column });
        }
    }
}

struct Parser<'s> {
    toks: Vec<Spanned>,
    pos: usize,
    schema: &'s Arc<[String]>,
    params: Vec<ParamSlot>,
}

impl<'s> Parser<'s> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let s = &self.toks[self.pos];
        (s.line, s.column)
    }

    fn advance(&mut self) -> Spanned {
        let s = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        s
    }

    fn fail<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        let (line, column) = self.here();
        Err(ParseError { kind, line, column })
    }

    fn syntax<T>(&self, expected: &str) -> Result<T, ParseError> {
        self.fail(ParseErrorKind::Syntax(format!(
            "expected {expected}, found {}",
            self.peek().describe()
        )))
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            self.syntax(expected)
        }
    }

    fn feature(&mut self, name: &str) -> Result<usize, ParseError> {
        match self.schema.iter().position(|n| n == name) {
            Some(j) => {
                self.advance();
                Ok(j)
            }
            None => self.fail(ParseErrorKind::UnknownFeature(name.to_string())),
        }
    }

    fn param(&mut self, name: String, value: f64, frozen: bool, kind: ParamKind) -> Result<usize, ParseError> {
        if self.params.iter().any(|p| p.name == name) {
            return self.fail(ParseErrorKind::DuplicateParam(name));
        }
        self.advance();
        self.params.push(ParamSlot { name, value, frozen, kind });
        Ok(self.params.len() - 1)
    }

    fn expert(&mut self) -> Result<(Vec<GuardClause>, Node), ParseError> {
        self.expect(Tok::If, "`if`")?;
        let guard = self.pred()?;
        self.expect(Tok::Then, "`then`")?;
        let body = self.expr()?;
        self.expect(Tok::Else, "`else`")?;
        match self.peek() {
            Tok::Num(v) if *v == 0.0 => {
                self.advance();
            }
            _ => return self.syntax("`0` after `else`"),
        }
        if *self.peek() != Tok::Eof {
            return self.syntax("end of input after `else 0`");
        }
        Ok((guard, body))
    }

    fn pred(&mut self) -> Result<Vec<GuardClause>, ParseError> {
        if *self.peek() == Tok::True {
            self.advance();
            return Ok(Vec::new());
        }
        let mut clauses = vec![self.clause()?];
        while *self.peek() == Tok::And {
            self.advance();
            clauses.push(self.clause()?);
        }
        Ok(clauses)
    }

    fn clause(&mut self) -> Result<GuardClause, ParseError> {
        let feature = match self.peek().clone() {
            Tok::Feature(name) => self.feature(&name)?,
            _ => return self.syntax("a backquoted feature in the guard"),
        };
        let cmp = match self.peek() {
            Tok::Cmp(c) => *c,
            _ => return self.syntax("a comparison operator"),
        };
        self.advance();
        let rhs = match self.peek().clone() {
            Tok::Num(v) => {
                self.advance();
                Atom::Num(v)
            }
            Tok::Minus => {
                self.advance();
                match self.peek().clone() {
                    Tok::Num(v) => {
                        self.advance();
                        Atom::Num(-v)
                    }
                    _ => return self.syntax("a number after `-`"),
                }
            }
            Tok::Param { name, value, frozen } => {
                Atom::Param(self.param(name, value, frozen, ParamKind::Boundary)?)
            }
            _ => return self.syntax("a number or parameter as the threshold"),
        };
        Ok(GuardClause { feature, cmp, rhs })
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Node::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.factor()?;
            lhs = Node::bin(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.advance();
                Ok(Node::Num(v))
            }
            Tok::Param { name, value, frozen } => {
                Ok(Node::Param(self.param(name, value, frozen, ParamKind::Coefficient)?))
            }
            Tok::Feature(name) => Ok(Node::Feature(self.feature(&name)?)),
            Tok::Minus => {
                self.advance();
                if let Tok::Num(v) = self.peek().clone() {
                    self.advance();
                    return Ok(Node::Num(-v));
                }
                Ok(Node::Neg(Box::new(self.factor()?)))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let Some(func) = Func::from_name(&name) else {
                    if self.toks.get(self.pos + 1).is_some_and(|t| t.tok == Tok::LParen) {
                        return self.fail(ParseErrorKind::UnknownFunction(name));
                    }
                    return self.fail(ParseErrorKind::Syntax(format!(
                        "bare identifier `{name}`; feature names must be backquoted"
                    )));
                };
                let start = self.here();
                self.advance();
                self.expect(Tok::LParen, "`(` after function name")?;
                let mut args = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.advance();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)` closing the argument list")?;
                if args.len() != func.arity() {
                    return Err(ParseError {
                        kind: ParseErrorKind::Arity {
                            function: name,
                            expected: func.arity(),
                            got: args.len(),
                        },
                        line: start.0,
                        column: start.1,
                    });
                }
                Ok(Node::Call(func, args))
            }
            _ => self.syntax("an operand"),
        }
    }
}

pub fn parse(text: &str, schema: &Arc<[String]>) -> Result<ExpertExpr, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let mut p = Parser {
        toks,
        pos: 0,
        schema,
        params: Vec::new(),
    };
    let (guard, body) = p.expert()?;
    Ok(ExpertExpr {
        guard,
        body,
        params: p.params,
        schema: Arc::clone(schema),
    })
}
