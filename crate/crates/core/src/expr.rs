//! Small arithmetic expression language for weights and function coordinates.
//!
//! Grammar: `+ - * / ^`, parentheses, numbers, variables `x1..xd` (and `x`
//! in one dimension), named constants supplied by the caller (e.g. `j`, `l`),
//! `pi`, the functions `exp ln sqrt abs sin cos sign`, `bump(t)` =
//! exp(−1/(1−t²)) on |t| < 1 and zero elsewhere, `|x|` for the Euclidean
//! norm of the point, `|expr|` for the absolute value, and
//! `indicator(lo1, hi1, ..., lod, hid)` for a closed box.
//!
//! Expressions are differentiated symbolically and compiled to a postfix
//! program for evaluation.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::AxisBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Sign,
    /// n-th derivative of t ↦ exp(-1/(1-t²)) on |t| < 1, zero elsewhere.
    Bump(u8),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Norm,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Indicator(AxisBox),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(k) => write!(f, "x{}", k + 1),
            Expr::Norm => write!(f, "|x|"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(Func::Bump(0), a) => write!(f, "bump({a})"),
            Expr::Call(Func::Bump(n), a) => write!(f, "bump_d{n}({a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", format!("{func:?}").to_lowercase()),
            Expr::Indicator(b) => write!(f, "indicator({:?}, {:?})", b.lo, b.hi),
        }
    }
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x + y),
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x - y),
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), _) if *x == 0.0 => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x * y),
        (Expr::Const(x), _) | (_, Expr::Const(x)) if *x == 0.0 => c(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => c(0.0),
        (Expr::Const(x), Expr::Const(y)) => c(x / y),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => c(-x),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(y)) if *y == 0.0 => c(1.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => c(x.powf(*y)),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    if let Expr::Const(x) = a {
        return c(apply_func(f, x));
    }
    Expr::Call(f, Box::new(a))
}

fn apply_func(f: Func, x: f64) -> f64 {
    match f {
        Func::Exp => x.exp(),
        Func::Ln => x.ln(),
        Func::Sqrt => x.sqrt(),
        Func::Abs => x.abs(),
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Bump(n) => crate::bump::bump1d(n as usize, x),
        Func::Sign => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

impl Expr {
    /// Symbolic partial derivative with respect to `x_{axis+1}`.
    pub fn diff(&self, axis: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::Indicator(_) => c(0.0),
            Expr::Var(k) => c(if *k == axis { 1.0 } else { 0.0 }),
            Expr::Norm => div(Expr::Var(axis), Expr::Norm),
            Expr::Neg(a) => neg(a.diff(axis)),
            Expr::Add(a, b) => add(a.diff(axis), b.diff(axis)),
            Expr::Sub(a, b) => sub(a.diff(axis), b.diff(axis)),
            Expr::Mul(a, b) => add(
                mul(a.diff(axis), (**b).clone()),
                mul((**a).clone(), b.diff(axis)),
            ),
            Expr::Div(a, b) => {
                let num = sub(
                    mul(a.diff(axis), (**b).clone()),
                    mul((**a).clone(), b.diff(axis)),
                );
                div(num, pow((**b).clone(), c(2.0)))
            }
            Expr::Pow(a, b) => {
                if let Expr::Const(p) = **b {
                    mul(mul(c(p), pow((**a).clone(), c(p - 1.0))), a.diff(axis))
                } else {
                    // a^b (b' ln a + b a'/a)
                    let inner = add(
                        mul(b.diff(axis), call(Func::Ln, (**a).clone())),
                        div(mul((**b).clone(), a.diff(axis)), (**a).clone()),
                    );
                    mul(self.clone(), inner)
                }
            }
            Expr::Call(f, a) => {
                let da = a.diff(axis);
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Ln => div(c(1.0), (**a).clone()),
                    Func::Sqrt => div(c(0.5), self.clone()),
                    Func::Abs => call(Func::Sign, (**a).clone()),
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Sign => c(0.0),
                    Func::Bump(n) => call(Func::Bump(n + 1), (**a).clone()),
                };
                mul(outer, da)
            }
        }
    }

    /// Highest variable index used, plus one.
    fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Norm => 0,
            Expr::Indicator(b) => b.dim(),
            Expr::Var(k) => k + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn compile(&self) -> Program {
        let mut ops = Vec::new();
        emit(self, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) | Op::Norm | Op::Indicator(_) => depth += 1,
                Op::Neg | Op::Call(_) => {}
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow | Op::PowI(_) => depth -= 1,
            }
            // PowI consumes one and pushes one
            if let Op::PowI(_) = op {
                depth += 1;
            }
            max_depth = max_depth.max(depth);
        }
        Program {
            ops,
            max_depth,
            max_var: self.max_var(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.compile().eval(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Norm,
    Indicator(AxisBox),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowI(i32),
    Call(Func),
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Const(v) => ops.push(Op::Const(*v)),
        Expr::Var(k) => ops.push(Op::Var(*k)),
        Expr::Norm => ops.push(Op::Norm),
        Expr::Indicator(b) => ops.push(Op::Indicator(b.clone())),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Expr::Pow(a, b) => {
            emit(a, ops);
            match **b {
                Expr::Const(p) if p.fract() == 0.0 && p.abs() <= 64.0 => {
                    ops.push(Op::PowI(p as i32))
                }
                _ => {
                    emit(b, ops);
                    ops.push(Op::Pow);
                }
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}

/// Postfix program compiled from an [`Expr`].
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    max_depth: usize,
    max_var: usize,
}

const STACK: usize = 48;

impl Program {
    /// Number of coordinates the program reads.
    pub fn arity(&self) -> usize {
        self.max_var
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(v)] if *v == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.max_depth <= STACK {
            let mut st = [0.0f64; STACK];
            run(&self.ops, x, &mut st)
        } else {
            let mut st = vec![0.0f64; self.max_depth];
            run(&self.ops, x, &mut st)
        }
    }
}

fn run(ops: &[Op], x: &[f64], st: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match op {
            Op::Const(v) => {
                st[sp] = *v;
                sp += 1;
            }
            Op::Var(k) => {
                st[sp] = x[*k];
                sp += 1;
            }
            Op::Norm => {
                st[sp] = crate::geometry::norm(x);
                sp += 1;
            }
            Op::Indicator(b) => {
                st[sp] = if b.contains(&x[..b.dim()]) { 1.0 } else { 0.0 };
                sp += 1;
            }
            Op::Neg => st[sp - 1] = -st[sp - 1],
            Op::Call(f) => st[sp - 1] = apply_func(*f, st[sp - 1]),
            Op::PowI(p) => st[sp - 1] = st[sp - 1].powi(*p),
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                let b = st[sp - 1];
                let a = st[sp - 2];
                sp -= 1;
                st[sp - 1] = match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    _ => a.powf(b),
                };
            }
        }
    }
    st[0]
}

/// Parse an expression in `dim` variables with named constants.
pub fn parse(src: &str, dim: usize, constants: &HashMap<String, f64>) -> Result<Expr> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        constants,
        in_bars: 0,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(Error::Expression(format!(
            "unexpected token {:?} in '{src}'",
            p.tokens[p.pos]
        )));
    }
    if e.max_var() > dim {
        return Err(Error::Expression(format!(
            "'{src}' uses x{} but the dimension is {dim}",
            e.max_var()
        )));
    }
    Ok(e)
}

/// Parse without named constants.
pub fn parse_plain(src: &str, dim: usize) -> Result<Expr> {
    parse(src, dim, &HashMap::new())
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),|".contains(ch) {
            out.push(Tok::Op(ch));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character '{ch}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    dim: usize,
    constants: &'a HashMap<String, f64>,
    in_bars: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, ch: char) -> bool {
        if self.peek() == Some(&Tok::Op(ch)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, ch: char) -> Result<()> {
        if self.eat(ch) {
            Ok(())
        } else {
            Err(Error::Expression(format!(
                "expected '{ch}', found {:?}",
                self.peek()
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = add(lhs, self.term()?);
            } else if self.eat('-') {
                lhs = sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = mul(lhs, self.unary()?);
            } else if self.eat('/') {
                lhs = div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(neg(self.unary()?));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(pow(base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(c(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let saved = self.in_bars;
                self.in_bars = 0;
                let e = self.expr()?;
                self.in_bars = saved;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Op('|')) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Ident("x".into()))
                    && self.tokens.get(self.pos + 1) == Some(&Tok::Op('|'))
                {
                    self.pos += 2;
                    return Ok(Expr::Norm);
                }
                self.in_bars += 1;
                let e = self.expr()?;
                self.in_bars -= 1;
                self.expect('|')?;
                Ok(call(Func::Abs, e))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    return self.call(&name);
                }
                self.ident(&name)
            }
            other => Err(Error::Expression(format!("unexpected {other:?}"))),
        }
    }

    fn ident(&self, name: &str) -> Result<Expr> {
        if let Some(v) = self.constants.get(name) {
            return Ok(c(*v));
        }
        if name == "pi" {
            return Ok(c(std::f64::consts::PI));
        }
        if name == "x" && self.dim == 1 {
            return Ok(Expr::Var(0));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && k <= self.dim {
                    return Ok(Expr::Var(k - 1));
                }
                return Err(Error::Expression(format!(
                    "variable {name} out of range for d={}",
                    self.dim
                )));
            }
        }
        Err(Error::Expression(format!("unknown identifier '{name}'")))
    }

    fn call(&mut self, name: &str) -> Result<Expr> {
        self.expect('(')?;
        let saved = self.in_bars;
        self.in_bars = 0;
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        self.in_bars = saved;
        self.expect(')')?;
        let func = match name {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sign" => Func::Sign,
            "bump" => Func::Bump(0),
            "indicator" => {
                let vals: Vec<f64> = args
                    .iter()
                    .map(|a| match a {
                        Expr::Const(v) => Ok(*v),
                        _ => Err(Error::Expression(
                            "indicator bounds must be constants".into(),
                        )),
                    })
                    .collect::<Result<_>>()?;
                if !vals.len().is_multiple_of(2) || vals.is_empty() || vals.len() / 2 > self.dim {
                    return Err(Error::Expression(format!(
                        "indicator needs 2 bounds per axis, got {}",
                        vals.len()
                    )));
                }
                let lo = vals.iter().step_by(2).copied().collect();
                let hi = vals.iter().skip(1).step_by(2).copied().collect();
                return Ok(Expr::Indicator(AxisBox::new(lo, hi)?));
            }
            _ => return Err(Error::Expression(format!("unknown function '{name}'"))),
        };
        if args.len() != 1 {
            return Err(Error::Expression(format!("{name} takes one argument")));
        }
        Ok(call(func, args.pop().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        parse_plain(src, x.len()).unwrap().eval(x)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3", &[0.0]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[0.0]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[0.0]), -4.0);
        assert_eq!(ev("(1 + x)^2", &[2.0]), 9.0);
        assert_eq!(ev("x1 * x2 - 1", &[3.0, 4.0]), 11.0);
        assert!((ev("2.5e-1 * 4", &[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norm_abs_and_indicator() {
        assert_eq!(ev("|x|", &[3.0, 4.0]), 5.0);
        assert_eq!(ev("|x1 - 5|", &[3.0, 4.0]), 2.0);
        assert_eq!(ev("(1 + |x|^2)^(1/2)", &[0.0, 0.0]), 1.0);
        assert_eq!(ev("indicator(0, 1)", &[1.0]), 1.0);
        assert_eq!(ev("indicator(0, 1)", &[1.5]), 0.0);
        assert_eq!(ev("indicator(0, 1, 2, 3)", &[0.5, 2.5]), 1.0);
        assert_eq!(ev("exp(-abs(x1)/2)", &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn named_constants() {
        let mut k = HashMap::new();
        k.insert("l".to_string(), 2.0);
        let e = parse("(1 + |x|^2)^(l/2)", 2, &k).unwrap();
        assert!((e.eval(&[1.0, 2f64.sqrt()]) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn parse_errors() {
        assert!(parse_plain("x3", 2).is_err());
        assert!(parse_plain("foo(1)", 1).is_err());
        assert!(parse_plain("1 +", 1).is_err());
        assert!(parse_plain("(1", 1).is_err());
        assert!(parse_plain("indicator(0)", 1).is_err());
        assert!(parse_plain("y", 1).is_err());
    }

    #[test]
    fn symbolic_derivatives() {
        let e = parse_plain("exp(-x^2)", 1).unwrap();
        let d = e.diff(0);
        for &x in &[-1.3, 0.0, 0.4, 2.0] {
            assert!((d.eval(&[x]) - (-2.0 * x * (-x * x).exp())).abs() < 1e-15);
        }
        let e = parse_plain("x1^3 * sin(x2) / (1 + x1^2)", 2).unwrap();
        let dx = e.diff(0).compile();
        let x = [0.7, -0.3];
        let h = 1e-6;
        let fd = (e.eval(&[x[0] + h, x[1]]) - e.eval(&[x[0] - h, x[1]])) / (2.0 * h);
        assert!((dx.eval(&x) - fd).abs() < 1e-8);
        assert!(parse_plain("5", 1).unwrap().diff(0).compile().is_zero());
    }

    #[test]
    fn norm_derivative() {
        let e = parse_plain("|x|^2", 2).unwrap();
        let d = e.diff(1);
        assert!((d.eval(&[1.0, 3.0]) - 6.0).abs() < 1e-12);
    }
}
