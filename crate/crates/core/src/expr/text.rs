//! Prefix text form, e.g. `(add (pow (var 0) 2) (exp (neg (var 1))))`.
//!
//! Bare numbers are constants. `add` and `mul` accept two or more operands
//! when parsing (folded left); the writer always emits binary nodes.

use std::fmt;

use thiserror::Error;

use super::{Expr, Node};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("`{op}` expects {expected} operand(s), got {got}")]
    Arity {
        op: String,
        expected: &'static str,
        got: usize,
    },
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("trailing input after expression")]
    Trailing,
}

fn write_number(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(f, "{}", v as i64)
    } else {
        write!(f, "{v:?}")
    }
}

pub(super) fn write_prefix(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e.node() {
        Node::Const(c) => write_number(*c, f),
        Node::Var(i) => write!(f, "(var {i})"),
        Node::Add(a, b) => write!(f, "(add {a} {b})"),
        Node::Sub(a, b) => write!(f, "(sub {a} {b})"),
        Node::Mul(a, b) => write!(f, "(mul {a} {b})"),
        Node::Div(a, b) => write!(f, "(div {a} {b})"),
        Node::Pow(a, k) => write!(f, "(pow {a} {k})"),
        Node::Exp(a) => write!(f, "(exp {a})"),
        Node::Neg(a) => write!(f, "(neg {a})"),
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

struct Parser {
    tokens: Vec<String>,
    pos: usize,
}

impl Parser {
    fn next(&mut self) -> Result<String, ParseError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn number(tok: &str) -> Result<f64, ParseError> {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseError::InvalidNumber(tok.to_string()))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let tok = self.next()?;
        if tok == ")" {
            return Err(ParseError::UnexpectedToken(tok));
        }
        if tok != "(" {
            return Self::number(&tok).map(Expr::constant);
        }
        let op = self.next()?;
        match op.as_str() {
            "var" => {
                let idx = self.next()?;
                let i = idx
                    .parse::<usize>()
                    .map_err(|_| ParseError::InvalidNumber(idx.clone()))?;
                self.close()?;
                Ok(Expr::var(i))
            }
            "const" => {
                let v = Self::number(&self.next()?)?;
                self.close()?;
                Ok(Expr::constant(v))
            }
            "pow" => {
                let base = self.expr()?;
                let k = self.next()?;
                let k = k.parse::<u32>().map_err(|_| ParseError::InvalidNumber(k.clone()))?;
                self.close()?;
                Ok(base.powi(k))
            }
            _ => {
                let mut args = Vec::new();
                while self.peek() != Some(")") {
                    if self.peek().is_none() {
                        return Err(ParseError::UnexpectedEnd);
                    }
                    args.push(self.expr()?);
                }
                self.close()?;
                build(&op, args)
            }
        }
    }

    fn close(&mut self) -> Result<(), ParseError> {
        match self.next()? {
            t if t == ")" => Ok(()),
            t => Err(ParseError::UnexpectedToken(t)),
        }
    }
}

fn build(op: &str, args: Vec<Expr>) -> Result<Expr, ParseError> {
    let arity = |expected: &'static str| ParseError::Arity {
        op: op.to_string(),
        expected,
        got: args.len(),
    };
    match op {
        "add" | "mul" => {
            if args.len() < 2 {
                return Err(arity("2+"));
            }
            let mut it = args.into_iter();
            let first = it.next().unwrap();
            Ok(it.fold(first, |acc, e| if op == "add" { acc + e } else { acc * e }))
        }
        "sub" | "div" => {
            if args.len() != 2 {
                return Err(arity("2"));
            }
            let mut it = args.into_iter();
            let (a, b) = (it.next().unwrap(), it.next().unwrap());
            Ok(if op == "sub" { a - b } else { a / b })
        }
        "exp" | "neg" => {
            if args.len() != 1 {
                return Err(arity("1"));
            }
            let a = args.into_iter().next().unwrap();
            Ok(if op == "exp" { a.exp() } else { -a })
        }
        _ => Err(ParseError::UnknownOperator(op.to_string())),
    }
}

pub(super) fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        tokens: tokenize(text),
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(ParseError::Trailing);
    }
    Ok(e)
}
