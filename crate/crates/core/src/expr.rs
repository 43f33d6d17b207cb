//! Arithmetic expressions over `x1..xn` with exact first derivatives.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' uint)*          // right associative
//! atom    := number | 'x'<index> | ('min'|'max') '(' sum ',' sum ')' | '(' sum ')'
//! ```
//!
//! Derivatives come from evaluating the tree over dual numbers that carry a
//! full gradient, so they are exact up to floating point rounding.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::problem::{NlpProblem, ScalarFn};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// zero-based variable index
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

/// A parsed expression bound to a variable count.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Expr,
    n: usize,
}

impl Expression {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        eval_real(&self.root, x)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_dual(x)?.grad)
    }

    /// Value and gradient in one pass.
    pub fn eval_dual(&self, x: &[f64]) -> Result<Dual> {
        self.check_len(x)?;
        eval_dual(&self.root, x)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Expr {
    // Fully parenthesised, so re-parsing evaluates identically.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, p) => write!(f, "({a}^{p})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

/// Value plus gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    fn constant(value: f64, n: usize) -> Self {
        Self {
            value,
            grad: vec![0.0; n],
        }
    }

    fn variable(value: f64, i: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[i] = 1.0;
        Self { value, grad }
    }

    fn combine(self, other: &Dual, value: f64, da: f64, db: f64) -> Self {
        let grad = self
            .grad
            .iter()
            .zip(&other.grad)
            .map(|(ga, gb)| da * ga + db * gb)
            .collect();
        Self { value, grad }
    }
}

fn eval_real(e: &Expr, x: &[f64]) -> Result<f64> {
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Var(i) => x[*i],
        Expr::Neg(a) => -eval_real(a, x)?,
        Expr::Add(a, b) => eval_real(a, x)? + eval_real(b, x)?,
        Expr::Sub(a, b) => eval_real(a, x)? - eval_real(b, x)?,
        Expr::Mul(a, b) => eval_real(a, x)? * eval_real(b, x)?,
        Expr::Div(a, b) => {
            let den = eval_real(b, x)?;
            if den == 0.0 {
                return Err(Error::DivisionByZero);
            }
            eval_real(a, x)? / den
        }
        Expr::Pow(a, p) => powu(eval_real(a, x)?, *p),
        Expr::Min(a, b) => {
            let (u, v) = (eval_real(a, x)?, eval_real(b, x)?);
            if u <= v {
                u
            } else {
                v
            }
        }
        Expr::Max(a, b) => {
            let (u, v) = (eval_real(a, x)?, eval_real(b, x)?);
            if u >= v {
                u
            } else {
                v
            }
        }
    })
}

fn powu(v: f64, p: u32) -> f64 {
    match i32::try_from(p) {
        Ok(p) => v.powi(p),
        Err(_) => v.powf(p as f64),
    }
}

fn eval_dual(e: &Expr, x: &[f64]) -> Result<Dual> {
    let n = x.len();
    Ok(match e {
        Expr::Const(c) => Dual::constant(*c, n),
        Expr::Var(i) => Dual::variable(x[*i], *i, n),
        Expr::Neg(a) => {
            let a = eval_dual(a, x)?;
            Dual {
                value: -a.value,
                grad: a.grad.iter().map(|g| -g).collect(),
            }
        }
        Expr::Add(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            let v = a.value + b.value;
            a.combine(&b, v, 1.0, 1.0)
        }
        Expr::Sub(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            let v = a.value - b.value;
            a.combine(&b, v, 1.0, -1.0)
        }
        Expr::Mul(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            let (u, v) = (a.value, b.value);
            a.combine(&b, u * v, v, u)
        }
        Expr::Div(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            let (u, v) = (a.value, b.value);
            if v == 0.0 {
                return Err(Error::DivisionByZero);
            }
            a.combine(&b, u / v, 1.0 / v, -u / (v * v))
        }
        Expr::Pow(a, p) => {
            let a = eval_dual(a, x)?;
            let u = a.value;
            let d = if *p == 0 {
                0.0
            } else {
                *p as f64 * powu(u, p - 1)
            };
            Dual {
                value: powu(u, *p),
                grad: a.grad.iter().map(|g| d * g).collect(),
            }
        }
        // ties take the first argument's branch
        Expr::Min(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            if a.value <= b.value {
                a
            } else {
                b
            }
        }
        Expr::Max(a, b) => {
            let (a, b) = (eval_dual(a, x)?, eval_dual(b, x)?);
            if a.value >= b.value {
                a
            } else {
                b
            }
        }
    })
}

/// Parses `text` as an expression over `x1..xn`.
pub fn parse(text: &str, n: usize) -> Result<Expression> {
    let mut p = Parser {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        n,
    };
    p.skip_ws();
    if p.pos >= p.bytes.len() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let root = p.sum()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.bytes[p.pos] as char)));
    }
    Ok(Expression { root, n })
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{}`", c as char)))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        let mut exps = Vec::new();
        while self.peek() == Some(b'^') {
            self.pos += 1;
            exps.push(self.exponent()?);
        }
        // a^b^c = a^(b^c)
        let Some(mut e) = exps.pop() else {
            return Ok(base);
        };
        while let Some(prev) = exps.pop() {
            e = prev
                .checked_pow(e)
                .ok_or_else(|| self.syntax("exponent overflow"))?;
        }
        Ok(Expr::Pow(Box::new(base), e))
    }

    fn exponent(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.syntax("exponent must be a non-negative integer literal"));
        }
        self.src[start..self.pos].parse().map_err(|_| Error::Syntax {
            offset: start,
            message: "exponent too large".into(),
        })
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.syntax(format!("unexpected `{}`", c as char))),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < b.len() && (b[p] == b'+' || b[p] == b'-') {
                p += 1;
            }
            if p < b.len() && b[p].is_ascii_digit() {
                while p < b.len() && b[p].is_ascii_digit() {
                    p += 1;
                }
                self.pos = p;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Syntax {
                offset: start,
                message: format!("invalid number `{}`", &self.src[start..self.pos]),
            })
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let word = &self.src[start..self.pos];
        match word {
            "min" | "max" => {
                self.expect(b'(')?;
                let a = self.sum()?;
                self.expect(b',')?;
                let c = self.sum()?;
                self.expect(b')')?;
                Ok(if word == "min" {
                    Expr::Min(Box::new(a), Box::new(c))
                } else {
                    Expr::Max(Box::new(a), Box::new(c))
                })
            }
            _ => {
                let digits = word.strip_prefix('x').filter(|d| {
                    !d.is_empty() && d.bytes().all(|c| c.is_ascii_digit()) && !d.starts_with('0')
                });
                let Some(digits) = digits else {
                    return Err(Error::UnknownIdentifier {
                        name: word.to_string(),
                        offset: start,
                    });
                };
                let index: usize = digits.parse().map_err(|_| Error::UnknownIdentifier {
                    name: word.to_string(),
                    offset: start,
                })?;
                if index > self.n {
                    return Err(Error::VariableOutOfRange {
                        index,
                        n: self.n,
                        offset: start,
                    });
                }
                Ok(Expr::Var(index - 1))
            }
        }
    }
}

impl ScalarFn for Expression {
    // Evaluation errors surface as NaN; the problem layer reports them as
    // non-finite values with the offending function named.
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).unwrap_or(f64::NAN)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad(x).unwrap_or_else(|_| vec![f64::NAN; x.len()])
    }
}

/// Parses a problem file:
///
/// ```text
/// # comment
/// name = my_problem
/// n = 2
/// objective = x1^2 + x2^2
/// eq = x1 + x2 - 1
/// ineq = -x1
/// ```
///
/// `eq` lines define `h_i(x) = 0`, `ineq` lines `g_j(x) <= 0`, in order.
/// An optional `kkt = 0.5, 0.5` line records a known KKT point.
pub fn parse_problem(text: &str) -> Result<NlpProblem> {
    let mut name = None;
    let mut n = None;
    let mut objective = None;
    let mut eqs = Vec::new();
    let mut ineqs = Vec::new();
    let mut kkt = Vec::new();

    let err = |line: usize, message: String| Error::ProblemFile { line, message };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(line_no, "expected `key = value`".into()));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "name" => name = Some(value.to_string()),
            "n" => {
                if n.is_some() {
                    return Err(err(line_no, "`n` given twice".into()));
                }
                let v: usize = value
                    .parse()
                    .map_err(|_| err(line_no, format!("invalid n `{value}`")))?;
                n = Some(v);
            }
            "objective" | "eq" | "ineq" | "kkt" => {
                let Some(n) = n else {
                    return Err(err(line_no, "`n` must come before expressions".into()));
                };
                match key {
                    "kkt" => {
                        let pt = value
                            .split(',')
                            .map(|s| s.trim().parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| err(line_no, format!("invalid kkt point: {e}")))?;
                        if pt.len() != n {
                            return Err(err(line_no, format!("kkt point needs {n} entries")));
                        }
                        kkt.push(pt);
                    }
                    _ => {
                        let e = parse(value, n).map_err(|e| err(line_no, e.to_string()))?;
                        match key {
                            "objective" if objective.is_some() => {
                                return Err(err(line_no, "objective given twice".into()))
                            }
                            "objective" => objective = Some(e),
                            "eq" => eqs.push(Arc::new(e) as Arc<dyn ScalarFn>),
                            _ => ineqs.push(Arc::new(e) as Arc<dyn ScalarFn>),
                        }
                    }
                }
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }

    let n = n.ok_or_else(|| err(0, "missing `n`".into()))?;
    let objective = objective.ok_or_else(|| err(0, "missing `objective`".into()))?;
    Ok(NlpProblem::new(
        name.unwrap_or_else(|| "file".to_string()),
        n,
        Arc::new(objective),
        eqs,
        ineqs,
    )?
    .with_known_kkt(kkt))
}
