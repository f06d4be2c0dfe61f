//! A small arithmetic-expression language for metric entries and curve
//! components supplied in configuration files.
//!
//! Grammar (left-associative, usual precedence):
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := base ("^" integer)?
//! base   := number | "pi" | ident | "(" expr ")" | func "(" expr ")" | "-" base
//! func   := "sin" | "cos" | "exp"
//! ident  := "x1".."x9" | "u" | "v" | "t"
//! ```
//!
//! `u`, `v` and `t` are reserved for sweepout and loop curves; metric entries
//! only see `x1..xn`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Coordinate `x{i+1}`.
    X(usize),
    U,
    V,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expression>),
    Bin(BinOp, Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, i32),
    Call(Func, Box<Expression>),
}

/// Variable bindings for evaluation. Unbound reserved variables read as 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub u: f64,
    pub v: f64,
    pub t: f64,
}

impl<'a> Env<'a> {
    pub fn coords(x: &'a [f64]) -> Self {
        Env { x, ..Default::default() }
    }
}

impl Expression {
    pub fn eval(&self, env: &Env<'_>) -> f64 {
        match self {
            Expression::Num(c) => *c,
            Expression::Pi => std::f64::consts::PI,
            Expression::Var(Var::X(i)) => env.x.get(*i).copied().unwrap_or(0.0),
            Expression::Var(Var::U) => env.u,
            Expression::Var(Var::V) => env.v,
            Expression::Var(Var::T) => env.t,
            Expression::Neg(a) => -a.eval(env),
            Expression::Bin(op, a, b) => {
                let (a, b) = (a.eval(env), b.eval(env));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expression::Pow(a, k) => a.eval(env).powi(*k),
            Expression::Call(f, a) => {
                let a = a.eval(env);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                }
            }
        }
    }

    /// Visits every variable occurring in the tree.
    pub fn for_each_var(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expression::Num(_) | Expression::Pi => {}
            Expression::Var(v) => f(*v),
            Expression::Neg(a) | Expression::Pow(a, _) | Expression::Call(_, a) => a.for_each_var(f),
            Expression::Bin(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    /// Checks that only `x1..x{dim}` (and, if allowed, the curve variables) occur.
    pub fn check_vars(&self, dim: usize, allow_curve_vars: bool) -> Result<()> {
        let mut bad = None;
        self.for_each_var(&mut |v| {
            let ok = match v {
                Var::X(i) => i < dim,
                _ => allow_curve_vars,
            };
            if !ok && bad.is_none() {
                bad = Some(v);
            }
        });
        match bad {
            None => Ok(()),
            Some(v) => Err(Error::UnknownIdentifier {
                name: var_name(v),
                position: 0,
            }),
        }
    }

    fn is_atom(&self) -> bool {
        matches!(
            self,
            Expression::Num(_) | Expression::Pi | Expression::Var(_) | Expression::Call(..)
        )
    }
}

fn var_name(v: Var) -> String {
    match v {
        Var::X(i) => format!("x{}", i + 1),
        Var::U => "u".into(),
        Var::V => "v".into(),
        Var::T => "t".into(),
    }
}

/// Printing is fully parenthesized so that re-parsing reproduces the tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Num(c) => write!(f, "{c:?}"),
            Expression::Pi => f.write_str("pi"),
            Expression::Var(v) => f.write_str(&var_name(*v)),
            Expression::Neg(a) => {
                if a.is_atom() {
                    write!(f, "(-{a})")
                } else {
                    write!(f, "(-({a}))")
                }
            }
            Expression::Bin(op, a, b) => {
                let op = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a} {op} {b})")
            }
            Expression::Pow(a, k) => {
                if a.is_atom() {
                    write!(f, "({a}^{k})")
                } else {
                    write!(f, "(({a})^{k})")
                }
            }
            Expression::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_expression(s)
    }
}

pub fn parse_expression(text: &str) -> Result<Expression> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, len: text.len() };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some((pos, tok)) => Err(Error::Syntax {
            position: pos,
            message: format!("unexpected {tok:?}"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(i64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((start, Tok::Plus)),
            b'-' => out.push((start, Tok::Minus)),
            b'*' => out.push((start, Tok::Star)),
            b'/' => out.push((start, Tok::Slash)),
            b'^' => out.push((start, Tok::Caret)),
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
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
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                let tok = if lit.bytes().all(|b| b.is_ascii_digit()) {
                    lit.parse::<i64>().map(Tok::Int).unwrap_or(Tok::Num(value))
                } else {
                    Tok::Num(value)
                };
                out.push((start, tok));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<(usize, &Tok)> {
        self.tokens.get(self.pos).map(|(p, t)| (*p, t))
    }

    fn next(&mut self) -> Option<(usize, Tok)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(p, _)| p).unwrap_or(self.len)
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let at = self.here();
        match self.next() {
            Some((_, t)) if t == want => Ok(()),
            other => Err(Error::Syntax {
                position: at,
                message: format!("expected {want:?}, found {:?}", other.map(|x| x.1)),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expression> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some((_, Tok::Plus)) => BinOp::Add,
                Some((_, Tok::Minus)) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expression::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expression> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some((_, Tok::Star)) => BinOp::Mul,
                Some((_, Tok::Slash)) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expression::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expression> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.pos += 1;
            return Ok(Expression::Neg(Box::new(self.factor()?)));
        }
        let base = self.base()?;
        if let Some((_, Tok::Caret)) = self.peek() {
            self.pos += 1;
            let at = self.here();
            let negative = matches!(self.peek(), Some((_, Tok::Minus)));
            if negative {
                self.pos += 1;
            }
            match self.next() {
                Some((_, Tok::Int(k))) if k <= i32::MAX as i64 => {
                    let k = k as i32;
                    Ok(Expression::Pow(Box::new(base), if negative { -k } else { k }))
                }
                _ => Err(Error::Syntax {
                    position: at,
                    message: "exponent must be an integer".into(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Expression> {
        let at = self.here();
        match self.next() {
            Some((_, Tok::Num(c))) => Ok(Expression::Num(c)),
            Some((_, Tok::Int(k))) => Ok(Expression::Num(k as f64)),
            Some((_, Tok::LParen)) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some((pos, Tok::Ident(name))) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    _ => None,
                };
                if let Some(func) = func {
                    self.expect(Tok::LParen)?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expression::Call(func, Box::new(e)));
                }
                let var = match name.as_str() {
                    "pi" => return Ok(Expression::Pi),
                    "u" => Var::U,
                    "v" => Var::V,
                    "t" => Var::T,
                    s if s.len() == 2 && s.starts_with('x') && (b'1'..=b'9').contains(&s.as_bytes()[1]) => {
                        Var::X((s.as_bytes()[1] - b'1') as usize)
                    }
                    _ => return Err(Error::UnknownIdentifier { name, position: pos }),
                };
                Ok(Expression::Var(var))
            }
            other => Err(Error::Syntax {
                position: at,
                message: format!("unexpected {:?}", other.map(|x| x.1)),
            }),
        }
    }
}
