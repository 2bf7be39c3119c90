//! Closed-form scalar fields on a chart.
//!
//! A small grammar over the chart coordinates `u`, `v`: numeric literals,
//! `pi`, the binary operators `+ - * /`, unary minus, parentheses and the
//! functions `sin`, `cos`, `exp`. Expressions differentiate symbolically, so
//! Christoffel symbols and their derivatives carry no interpolation error.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    U,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input `{}` in `{src}`",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::U) => u,
            Expr::Var(Var::V) => v,
            Expr::Neg(a) => -a.eval(u, v),
            Expr::Add(a, b) => a.eval(u, v) + b.eval(u, v),
            Expr::Sub(a, b) => a.eval(u, v) - b.eval(u, v),
            Expr::Mul(a, b) => a.eval(u, v) * b.eval(u, v),
            Expr::Div(a, b) => a.eval(u, v) / b.eval(u, v),
            Expr::Sin(a) => a.eval(u, v).sin(),
            Expr::Cos(a) => a.eval(u, v).cos(),
            Expr::Exp(a) => a.eval(u, v).exp(),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Symbolic partial derivative, constant-folded.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(w) => Expr::Const(if *w == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(
                mul(a.diff(var), (**b).clone()),
                mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.diff(var), (**b).clone()),
                    mul((**a).clone(), b.diff(var)),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(var)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(var))),
            Expr::Exp(a) => mul(Expr::Exp(a.clone()), a.diff(var)),
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(0.0), e) | (e, Expr::Const(0.0)) => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (e, Expr::Const(0.0)) => e,
        (Expr::Const(0.0), e) => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x / y),
        (Expr::Const(0.0), _) => Expr::Const(0.0),
        (e, Expr::Const(1.0)) => e,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(Var::U) => write!(f, "u"),
            Expr::Var(Var::V) => write!(f, "v"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(x) => write!(f, "{x}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Op(c) => write!(f, "{c}"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let x = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}` in `{src}`")))?;
            out.push(Token::Num(x));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    if out.is_empty() {
        return Err(Error::Expr("empty expression".into()));
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    // sum := product (('+' | '-') product)*
    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    // product := unary (('*' | '/') unary)*
    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Token::Num(x)) => Ok(Expr::Const(x)),
            Some(Token::LParen) => {
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "u" => Ok(Expr::Var(Var::U)),
                "v" => Ok(Expr::Var(Var::V)),
                "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                "sin" | "cos" | "exp" => {
                    match self.next() {
                        Some(Token::LParen) => {}
                        _ => return Err(Error::Expr(format!("expected `(` after `{name}`"))),
                    }
                    let arg = Box::new(self.sum()?);
                    self.expect_rparen()?;
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        _ => Expr::Exp(arg),
                    })
                }
                other => Err(Error::Expr(format!("unknown identifier `{other}`"))),
            },
            Some(t) => Err(Error::Expr(format!("unexpected token `{t}`"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(Token::RParen) => Ok(()),
            _ => Err(Error::Expr("expected `)`".into())),
        }
    }
}

/// An expression bundled with the derivatives the flow and its linearization
/// need (gradient and Hessian).
#[derive(Debug, Clone)]
pub struct ScalarField {
    source: String,
    expr: Expr,
    constant: Option<f64>,
}

/// Value, gradient and Hessian of a field at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

// second-order forward-mode number: value, du, dv, duu, duv, dvv
#[derive(Clone, Copy)]
struct Dual2([f64; 6]);

impl Dual2 {
    fn constant(c: f64) -> Self {
        Dual2([c, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    fn add(self, o: Self) -> Self {
        Dual2(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    fn sub(self, o: Self) -> Self {
        Dual2(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }

    fn neg(self) -> Self {
        Dual2(self.0.map(|x| -x))
    }

    fn mul(self, o: Self) -> Self {
        let [a, au, av, auu, auv, avv] = self.0;
        let [b, bu, bv, buu, buv, bvv] = o.0;
        Dual2([
            a * b,
            au * b + a * bu,
            av * b + a * bv,
            auu * b + 2.0 * au * bu + a * buu,
            auv * b + au * bv + av * bu + a * buv,
            avv * b + 2.0 * av * bv + a * bvv,
        ])
    }

    /// `f(self)` given `f`, `f'` and `f''` at the value.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let [_, u, v, uu, uv, vv] = self.0;
        Dual2([
            f0,
            f1 * u,
            f1 * v,
            f1 * uu + f2 * u * u,
            f1 * uv + f2 * u * v,
            f1 * vv + f2 * v * v,
        ])
    }

    fn div(self, o: Self) -> Self {
        let b = o.0[0];
        let inv = 1.0 / b;
        self.mul(o.chain(inv, -inv * inv, 2.0 * inv * inv * inv))
    }
}

fn eval_dual(e: &Expr, u: f64, v: f64) -> Dual2 {
    match e {
        Expr::Const(c) => Dual2::constant(*c),
        Expr::Var(Var::U) => Dual2([u, 1.0, 0.0, 0.0, 0.0, 0.0]),
        Expr::Var(Var::V) => Dual2([v, 0.0, 1.0, 0.0, 0.0, 0.0]),
        Expr::Neg(a) => eval_dual(a, u, v).neg(),
        Expr::Add(a, b) => eval_dual(a, u, v).add(eval_dual(b, u, v)),
        Expr::Sub(a, b) => eval_dual(a, u, v).sub(eval_dual(b, u, v)),
        Expr::Mul(a, b) => eval_dual(a, u, v).mul(eval_dual(b, u, v)),
        Expr::Div(a, b) => eval_dual(a, u, v).div(eval_dual(b, u, v)),
        Expr::Sin(a) => {
            let x = eval_dual(a, u, v);
            let (s, c) = x.0[0].sin_cos();
            x.chain(s, c, -s)
        }
        Expr::Cos(a) => {
            let x = eval_dual(a, u, v);
            let (s, c) = x.0[0].sin_cos();
            x.chain(c, -s, -c)
        }
        Expr::Exp(a) => {
            let x = eval_dual(a, u, v);
            let e = x.0[0].exp();
            x.chain(e, e, e)
        }
    }
}

// first-order version: value, du, dv
fn eval_dual1(e: &Expr, u: f64, v: f64) -> [f64; 3] {
    let unary = |a: &Expr, f: fn(f64) -> (f64, f64)| {
        let [x, xu, xv] = eval_dual1(a, u, v);
        let (f0, f1) = f(x);
        [f0, f1 * xu, f1 * xv]
    };
    match e {
        Expr::Const(c) => [*c, 0.0, 0.0],
        Expr::Var(Var::U) => [u, 1.0, 0.0],
        Expr::Var(Var::V) => [v, 0.0, 1.0],
        Expr::Neg(a) => eval_dual1(a, u, v).map(|x| -x),
        Expr::Add(a, b) => {
            let (x, y) = (eval_dual1(a, u, v), eval_dual1(b, u, v));
            [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
        }
        Expr::Sub(a, b) => {
            let (x, y) = (eval_dual1(a, u, v), eval_dual1(b, u, v));
            [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
        }
        Expr::Mul(a, b) => {
            let (x, y) = (eval_dual1(a, u, v), eval_dual1(b, u, v));
            [x[0] * y[0], x[1] * y[0] + x[0] * y[1], x[2] * y[0] + x[0] * y[2]]
        }
        Expr::Div(a, b) => {
            let (x, y) = (eval_dual1(a, u, v), eval_dual1(b, u, v));
            let q = x[0] / y[0];
            [q, (x[1] - q * y[1]) / y[0], (x[2] - q * y[2]) / y[0]]
        }
        Expr::Sin(a) => unary(a, |x| {
            let (s, c) = x.sin_cos();
            (s, c)
        }),
        Expr::Cos(a) => unary(a, |x| {
            let (s, c) = x.sin_cos();
            (c, -s)
        }),
        Expr::Exp(a) => unary(a, |x| {
            let e = x.exp();
            (e, e)
        }),
    }
}

impl ScalarField {
    pub fn new(source: &str, expr: Expr) -> Self {
        let constant = expr.as_constant();
        Self {
            source: source.to_string(),
            expr,
            constant,
        }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self::new(src, Expr::parse(src)?))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&format!("{c}"), Expr::Const(c))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn value(&self, u: f64, v: f64) -> f64 {
        match self.constant {
            Some(c) => c,
            None => self.expr.eval(u, v),
        }
    }

    pub fn grad(&self, u: f64, v: f64) -> [f64; 2] {
        self.value_grad(u, v).1
    }

    pub fn value_grad(&self, u: f64, v: f64) -> (f64, [f64; 2]) {
        if let Some(c) = self.constant {
            return (c, [0.0; 2]);
        }
        let [x, xu, xv] = eval_dual1(&self.expr, u, v);
        (x, [xu, xv])
    }

    pub fn jet(&self, u: f64, v: f64) -> Jet {
        if let Some(c) = self.constant {
            return Jet {
                value: c,
                ..Jet::default()
            };
        }
        let [value, du, dv, duu, duv, dvv] = eval_dual(&self.expr, u, v).0;
        Jet {
            value,
            grad: [du, dv],
            hess: [[duu, duv], [duv, dvv]],
        }
    }
}
