//! Kernel expression mini-grammar.
//!
//! Selection kernels in model files may be given as expression strings over
//! the variables `x`, `y`, `mu[x]`, `mu[y]`. The grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := NUMBER | VAR | '-' factor | '(' expr ')'
//!         | 'min' '(' expr ',' expr ')' | 'max' '(' expr ',' expr ')'
//!         | 'pos' '(' expr ')' | 'neg' '(' expr ')'
//! VAR    := 'x' | 'y' | 'mu[x]' | 'mu[y]'
//! ```
//!
//! `x` and `y` evaluate to 1-based state indices; `mu[x]`, `mu[y]` to the
//! weight of the current measure at those states. `pos(e)` is the positive
//! part max(e, 0); `neg(e)` the negative part max(-e, 0), so that
//! `pos(e) - neg(e) = e` for every argument. Numbers are decimal literals
//! with optional fraction and exponent.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Const(f64),
    X,
    Y,
    MuX,
    MuY,
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Min(Box<Ast>, Box<Ast>),
    Max(Box<Ast>, Box<Ast>),
    Pos(Box<Ast>),
    NegPart(Box<Ast>),
}

impl Ast {
    fn eval(&self, x: f64, y: f64, mu_x: f64, mu_y: f64) -> f64 {
        match self {
            Ast::Const(c) => *c,
            Ast::X => x,
            Ast::Y => y,
            Ast::MuX => mu_x,
            Ast::MuY => mu_y,
            Ast::Neg(e) => -e.eval(x, y, mu_x, mu_y),
            Ast::Add(a, b) => a.eval(x, y, mu_x, mu_y) + b.eval(x, y, mu_x, mu_y),
            Ast::Sub(a, b) => a.eval(x, y, mu_x, mu_y) - b.eval(x, y, mu_x, mu_y),
            Ast::Mul(a, b) => a.eval(x, y, mu_x, mu_y) * b.eval(x, y, mu_x, mu_y),
            Ast::Min(a, b) => a.eval(x, y, mu_x, mu_y).min(b.eval(x, y, mu_x, mu_y)),
            Ast::Max(a, b) => a.eval(x, y, mu_x, mu_y).max(b.eval(x, y, mu_x, mu_y)),
            Ast::Pos(e) => e.eval(x, y, mu_x, mu_y).max(0.0),
            Ast::NegPart(e) => (-e.eval(x, y, mu_x, mu_y)).max(0.0),
        }
    }

    fn uses(&self, pred: &dyn Fn(&Ast) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Ast::Const(_) | Ast::X | Ast::Y | Ast::MuX | Ast::MuY => false,
            Ast::Neg(e) | Ast::Pos(e) | Ast::NegPart(e) => e.uses(pred),
            Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Min(a, b) | Ast::Max(a, b) => {
                a.uses(pred) || b.uses(pred)
            }
        }
    }
}

/// A parsed kernel expression. Serializes as its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpr {
    src: String,
    ast: Ast,
}

impl KernelExpr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut parser = Parser { tokens, pos: 0 };
        let ast = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input at offset {} in {src:?}",
                parser.tokens[parser.pos].1
            )));
        }
        Ok(KernelExpr {
            src: src.to_string(),
            ast,
        })
    }

    /// Evaluates with 1-based indices and the measure weights at x and y.
    pub fn eval(&self, x: usize, y: usize, mu_x: f64, mu_y: f64) -> f64 {
        self.ast
            .eval((x + 1) as f64, (y + 1) as f64, mu_x, mu_y)
    }

    /// Whether the expression reads the measure.
    pub fn uses_mu(&self) -> bool {
        self.ast.uses(&|a| matches!(a, Ast::MuX | Ast::MuY))
    }

    /// Whether the expression reads the second state variable.
    pub fn uses_y(&self) -> bool {
        self.ast.uses(&|a| matches!(a, Ast::Y | Ast::MuY))
    }

    pub fn src(&self) -> &str {
        &self.src
    }
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl Serialize for KernelExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for KernelExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        KernelExpr::parse(&src).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Comma,
    MuX,
    MuY,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Optional exponent part.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| {
                    Error::Expr(format!("bad number {text:?} at offset {start} in {src:?}"))
                })?;
                out.push((Tok::Num(value), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                let ident = &src[start..i];
                if ident == "mu" {
                    // Expect [x] or [y].
                    let rest = &src[i..];
                    if let Some(stripped) = rest.strip_prefix("[x]") {
                        let _ = stripped;
                        out.push((Tok::MuX, start));
                        i += 3;
                    } else if rest.starts_with("[y]") {
                        out.push((Tok::MuY, start));
                        i += 3;
                    } else {
                        return Err(Error::Expr(format!(
                            "expected mu[x] or mu[y] at offset {start} in {src:?}"
                        )));
                    }
                } else {
                    out.push((Tok::Ident(ident.to_string()), start));
                }
            }
            _ => {
                return Err(Error::Expr(format!(
                    "unexpected character {c:?} at offset {i} in {src:?}"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => Err(Error::Expr(format!("expected {what}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Ast::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Ast::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Ast> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Ast::Const(v)),
            Some(Tok::MuX) => Ok(Ast::MuX),
            Some(Tok::MuY) => Ok(Ast::MuY),
            Some(Tok::Minus) => Ok(Ast::Neg(Box::new(self.factor()?))),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Ast::X),
                "y" => Ok(Ast::Y),
                "min" | "max" => {
                    self.expect(Tok::LParen, "'(' after function name")?;
                    let a = self.expr()?;
                    self.expect(Tok::Comma, "',' between arguments")?;
                    let b = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(if name == "min" {
                        Ast::Min(Box::new(a), Box::new(b))
                    } else {
                        Ast::Max(Box::new(a), Box::new(b))
                    })
                }
                "pos" | "neg" => {
                    self.expect(Tok::LParen, "'(' after function name")?;
                    let a = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(if name == "pos" {
                        Ast::Pos(Box::new(a))
                    } else {
                        Ast::NegPart(Box::new(a))
                    })
                }
                other => Err(Error::Expr(format!(
                    "unknown identifier {other:?} (expected x, y, mu[x], mu[y], min, max, pos, neg)"
                ))),
            },
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}
