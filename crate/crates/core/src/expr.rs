//! Scalar expression language over variables `x1..xd`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'pi' | var | func '(' expr ')' | '(' expr ')'
//! func    := 'exp' | 'ln' | 'sin' | 'cos' | 'sqrt'
//! var     := prefix digits            (1-based, prefix is 'x' unless overridden)
//! ```
//!
//! Exponents must fold to a non-negative integer constant. `-x^2` parses as
//! `-(x^2)`, and `a^b^c` is right-associative.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Expression tree node. Variable indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnexpectedToken(String),
    UnknownIdentifier(String),
    VariableOutOfRange { index: usize, dim: usize },
    NonIntegerExponent,
    BadNumber(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind:?}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainErrorKind {
    LogNonPositive,
    DivisionByZero,
    SqrtNegative,
    /// `sqrt` is not differentiable at 0.
    SqrtAtZero,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error ({kind:?}) in `{node}`")]
pub struct DomainError {
    pub kind: DomainErrorKind,
    pub node: String,
}

impl DomainError {
    pub(crate) fn new(kind: DomainErrorKind, node: &Expr) -> Self {
        DomainError {
            kind,
            node: node.to_string(),
        }
    }
}

/// A parsed expression together with the number of variables it ranges over.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprFunction {
    root: Expr,
    dim: usize,
}

impl ExprFunction {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        Self::parse_with_prefix(source, dim, 'x')
    }

    /// Parse with a different variable letter (chart expressions use `t`).
    pub fn parse_with_prefix(source: &str, dim: usize, prefix: char) -> Result<Self, ParseError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            dim,
            prefix,
            end: source.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::UnexpectedToken(tok.kind.describe()),
            });
        }
        Ok(ExprFunction { root, dim })
    }

    pub fn from_parts(root: Expr, dim: usize) -> Self {
        debug_assert!(root.max_var().is_none_or(|m| m < dim));
        ExprFunction { root, dim }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, DomainError> {
        assert_eq!(point.len(), self.dim, "point dimension mismatch");
        self.root.eval(point)
    }

    /// Replace every variable `x_i` by `subs[i]` (expressions over `new_dim`
    /// variables), yielding the composition `self ∘ subs`.
    pub fn compose(&self, subs: &[ExprFunction], new_dim: usize) -> ExprFunction {
        assert_eq!(subs.len(), self.dim);
        assert!(subs.iter().all(|s| s.dim == new_dim));
        ExprFunction {
            root: self.root.substitute(&|i| subs[i].root.clone()),
            dim: new_dim,
        }
    }

    /// Render with a custom variable prefix.
    pub fn display_with_prefix(&self, prefix: char) -> String {
        let mut out = String::new();
        self.root.write(&mut out, prefix);
        out
    }
}

impl fmt::Display for ExprFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Expr {
    pub fn eval(&self, point: &[f64]) -> Result<f64, DomainError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => point[*i],
            Expr::Unary(op, a) => {
                let v = a.eval(point)?;
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Ln => {
                        if v <= 0.0 {
                            return Err(DomainError::new(DomainErrorKind::LogNonPositive, self));
                        }
                        v.ln()
                    }
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            return Err(DomainError::new(DomainErrorKind::SqrtNegative, self));
                        }
                        v.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(point)?;
                let y = b.eval(point)?;
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => {
                        if y == 0.0 {
                            return Err(DomainError::new(DomainErrorKind::DivisionByZero, self));
                        }
                        x / y
                    }
                }
            }
            Expr::Pow(a, n) => powi(a.eval(point)?, *n),
        })
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    fn substitute(&self, sub: &dyn Fn(usize) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => sub(*i),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(sub))),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.substitute(sub)), Box::new(b.substitute(sub)))
            }
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.substitute(sub)), *n),
        }
    }

    /// Fully parenthesized rendering; reparses to a structurally equal tree.
    fn write(&self, out: &mut String, prefix: char) {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    out.push_str(&format!("(0 - {:?})", -c));
                } else {
                    out.push_str(&format!("{c:?}"));
                }
            }
            Expr::Var(i) => out.push_str(&format!("{prefix}{}", i + 1)),
            Expr::Unary(UnaryOp::Neg, a) => {
                out.push_str("-(");
                a.write(out, prefix);
                out.push(')');
            }
            Expr::Unary(op, a) => {
                out.push_str(op.name());
                out.push('(');
                a.write(out, prefix);
                out.push(')');
            }
            Expr::Binary(op, a, b) => {
                out.push('(');
                a.write(out, prefix);
                out.push(' ');
                out.push(op.symbol());
                out.push(' ');
                b.write(out, prefix);
                out.push(')');
            }
            Expr::Pow(a, n) => {
                out.push('(');
                a.write(out, prefix);
                out.push_str(&format!(")^{n}"));
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.write(&mut out, 'x');
        f.write_str(&out)
    }
}

pub(crate) fn powi(base: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        _ => base.powi(n as i32),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("`{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // scientific suffix: e, E followed by optional sign and digits
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &source[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::BadNumber(text.to_string()),
            })?;
            tokens.push(Token {
                kind: TokenKind::Number(value),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(source[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            _ => {
                let ch = source[start..].chars().next().unwrap_or(c);
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnexpectedChar(ch),
                });
            }
        };
        tokens.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    prefix: char,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        let tok = self.tokens.get(self.pos).cloned().ok_or(ParseError {
            offset: self.end,
            kind: ParseErrorKind::UnexpectedEnd,
        })?;
        self.pos += 1;
        Ok(tok)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.eat_op(&['-', '+']) {
            Some('-') => Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_op(&['^']).is_none() {
            return Ok(base);
        }
        let offset = self.peek().map_or(self.end, |t| t.offset);
        let exponent = self.unary()?;
        let value = fold_constant(&exponent).ok_or(ParseError {
            offset,
            kind: ParseErrorKind::NonIntegerExponent,
        })?;
        if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
            return Err(ParseError {
                offset,
                kind: ParseErrorKind::NonIntegerExponent,
            });
        }
        Ok(Expr::Pow(Box::new(base), value as u32))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.next()?;
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => self.identifier(name, tok.offset),
            other => Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::UnexpectedToken(other.describe()),
            }),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if name == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        if let Some(op) = UnaryOp::from_name(&name) {
            match self.next()? {
                Token {
                    kind: TokenKind::LParen,
                    ..
                } => {}
                t => {
                    return Err(ParseError {
                        offset: t.offset,
                        kind: ParseErrorKind::UnexpectedToken(t.kind.describe()),
                    })
                }
            }
            let arg = self.expr()?;
            self.expect_rparen()?;
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        let mut chars = name.chars();
        if chars.next() == Some(self.prefix) {
            let digits = chars.as_str();
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| ParseError {
                    offset,
                    kind: ParseErrorKind::UnknownIdentifier(name.clone()),
                })?;
                if index == 0 || index > self.dim {
                    return Err(ParseError {
                        offset,
                        kind: ParseErrorKind::VariableOutOfRange {
                            index,
                            dim: self.dim,
                        },
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        Err(ParseError {
            offset,
            kind: ParseErrorKind::UnknownIdentifier(name),
        })
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let tok = self.next()?;
        match tok.kind {
            TokenKind::RParen => Ok(()),
            other => Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::UnexpectedToken(other.describe()),
            }),
        }
    }
}

fn fold_constant(e: &Expr) -> Option<f64> {
    if e.max_var().is_some() {
        return None;
    }
    e.eval(&[]).ok()
}
