//! Small arithmetic expression language for matrix generators.
//!
//! Grammar (lowest to highest precedence):
//! `or := and ('||' and)*`, `and := cmp ('&&' cmp)*`,
//! `cmp := sum (('<'|'<='|'>'|'>='|'=='|'!=') sum)?`, `sum := prod (('+'|'-') prod)*`,
//! `prod := unary (('*'|'/') unary)*`, `unary := '-' unary | pow`,
//! `pow := atom ('^' unary)?`, `atom := number | name | name '(' args ')' | '(' or ')'`.
//!
//! Comparisons and logic yield 1 or 0. Names are `k`, `pi`, `e` and
//! `theta1`, `theta2`, … (1-based parameter components).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character {ch:?} at offset {at} in {src:?}")]
    Char { ch: char, at: usize, src: String },
    #[error("parse error in {src:?}: {msg}")]
    Parse { src: String, msg: String },
    #[error("unknown name {0:?}")]
    Name(String),
    #[error("function {name} takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("parameter theta{index} is out of range for a vector of length {len}")]
    Parameter { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Sqrt,
    Exp,
    Ln,
    Abs,
    Floor,
    Ceil,
    Min,
    Max,
    If,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "atan" | "arctan" => (Func::Atan, 1),
            "sqrt" => (Func::Sqrt, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "abs" => (Func::Abs, 1),
            "floor" => (Func::Floor, 1),
            "ceil" => (Func::Ceil, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "if" => (Func::If, 3),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Step,
    Param(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression in the step `k` and parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    src: String,
    root: Node,
    max_param: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
            continue;
        }
        if ch.is_ascii_digit() || (ch == '.' && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
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
            let value = text.parse::<f64>().map_err(|_| ExprError::Parse {
                src: src.into(),
                msg: format!("bad number {text:?}"),
            })?;
            out.push(Tok::Num(value));
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op2 = ["<=", ">=", "==", "!=", "&&", "||"].into_iter().find(|op| *op == two);
        if let Some(op) = op2 {
            out.push(Tok::Op(op));
            i += 2;
            continue;
        }
        let tok = match ch {
            '+' => Tok::Op("+"),
            '-' => Tok::Op("-"),
            '*' => Tok::Op("*"),
            '/' => Tok::Op("/"),
            '^' => Tok::Op("^"),
            '<' => Tok::Op("<"),
            '>' => Tok::Op(">"),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return Err(ExprError::Char { ch, at: i, src: src.into() }),
        };
        out.push(tok);
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Tok>,
    pos: usize,
    max_param: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Parse { src: self.src.into(), msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        if let Some(Tok::Op(op)) = self.peek() {
            if let Some(found) = ops.iter().find(|o| *o == op) {
                self.pos += 1;
                return Some(found);
            }
        }
        None
    }

    fn binary(
        &mut self,
        ops: &[&'static str],
        next: fn(&mut Self) -> Result<Node, ExprError>,
    ) -> Result<Node, ExprError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.eat_op(ops) {
            let rhs = next(self)?;
            lhs = Node::Bin(bin_op(op), Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Node, ExprError> {
        self.binary(&["||"], Self::and)
    }

    fn and(&mut self) -> Result<Node, ExprError> {
        self.binary(&["&&"], Self::cmp)
    }

    fn cmp(&mut self) -> Result<Node, ExprError> {
        let lhs = self.sum()?;
        if let Some(op) = self.eat_op(&["<", "<=", ">", ">=", "==", "!="]) {
            let rhs = self.sum()?;
            return Ok(Node::Bin(bin_op(op), Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        self.binary(&["+", "-"], Self::prod)
    }

    fn prod(&mut self) -> Result<Node, ExprError> {
        self.binary(&["*", "/"], Self::unary)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op(&["-"]).is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op(&["+"]).is_some() {
            return self.unary();
        }
        self.pow()
    }

    fn pow(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&["^"]).is_some() {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = self.peek().cloned().ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.or()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.err("missing ')'")),
                }
            }
            Tok::Ident(name) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    return self.call(name);
                }
                self.name(&name)
            }
            other => Err(self.err(format!("unexpected token {other:?}"))),
        }
    }

    fn call(&mut self, name: String) -> Result<Node, ExprError> {
        let (func, arity) = Func::lookup(&name).ok_or_else(|| ExprError::Name(name.clone()))?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Some(Tok::RParen)) {
            loop {
                args.push(self.or()?);
                match self.peek() {
                    Some(Tok::Comma) => self.pos += 1,
                    Some(Tok::RParen) => break,
                    _ => return Err(self.err(format!("expected ',' or ')' in call to {name}"))),
                }
            }
        }
        self.pos += 1;
        if args.len() != arity {
            return Err(ExprError::Arity { name, expected: arity, got: args.len() });
        }
        Ok(Node::Call(func, args))
    }

    fn name(&mut self, name: &str) -> Result<Node, ExprError> {
        match name {
            "k" => Ok(Node::Step),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => {
                let index = name
                    .strip_prefix("theta")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|i| *i >= 1)
                    .ok_or_else(|| ExprError::Name(name.into()))?;
                self.max_param = self.max_param.max(index);
                Ok(Node::Param(index - 1))
            }
        }
    }
}

fn bin_op(op: &str) -> BinOp {
    match op {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "^" => BinOp::Pow,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "&&" => BinOp::And,
        "||" => BinOp::Or,
        _ => unreachable!("operator table and parser agree"),
    }
}

fn truth(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn eval(node: &Node, k: f64, theta: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Step => k,
        Node::Param(i) => theta[*i],
        Node::Neg(a) => -eval(a, k, theta),
        Node::Bin(op, a, b) => {
            let x = eval(a, k, theta);
            let y = eval(b, k, theta);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => x.powf(y),
                BinOp::Lt => truth(x < y),
                BinOp::Le => truth(x <= y),
                BinOp::Gt => truth(x > y),
                BinOp::Ge => truth(x >= y),
                BinOp::Eq => truth(x == y),
                BinOp::Ne => truth(x != y),
                BinOp::And => truth(x != 0.0 && y != 0.0),
                BinOp::Or => truth(x != 0.0 || y != 0.0),
            }
        }
        Node::Call(f, args) => {
            let a = |i: usize| eval(&args[i], k, theta);
            match f {
                Func::Sin => a(0).sin(),
                Func::Cos => a(0).cos(),
                Func::Tan => a(0).tan(),
                Func::Atan => a(0).atan(),
                Func::Sqrt => a(0).sqrt(),
                Func::Exp => a(0).exp(),
                Func::Ln => a(0).ln(),
                Func::Abs => a(0).abs(),
                Func::Floor => a(0).floor(),
                Func::Ceil => a(0).ceil(),
                Func::Min => a(0).min(a(1)),
                Func::Max => a(0).max(a(1)),
                Func::If => {
                    if a(0) != 0.0 {
                        a(1)
                    } else {
                        a(2)
                    }
                }
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let toks = tokenize(src)?;
        let mut p = Parser { src, toks, pos: 0, max_param: 0 };
        let root = p.or()?;
        if p.pos != p.toks.len() {
            return Err(p.err(format!("trailing input starting at token {:?}", p.toks[p.pos])));
        }
        Ok(Self { src: src.into(), root, max_param: p.max_param })
    }

    /// Number of parameter components the expression needs.
    pub fn params_needed(&self) -> usize {
        self.max_param
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// Evaluate at step `k`; `theta` must hold at least
    /// [`params_needed`](Self::params_needed) components.
    pub fn eval(&self, k: usize, theta: &[f64]) -> Result<f64, ExprError> {
        if theta.len() < self.max_param {
            return Err(ExprError::Parameter { index: self.max_param, len: theta.len() });
        }
        Ok(eval(&self.root, k as f64, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, k: usize, theta: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(k, theta).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(at("1 + 2 * 3", 0, &[]), 7.0);
        assert_eq!(at("(1 + 2) * 3", 0, &[]), 9.0);
        assert_eq!(at("8 / 4 / 2", 0, &[]), 1.0);
        assert_eq!(at("2 ^ 3 ^ 2", 0, &[]), 512.0);
        assert_eq!(at("-2 ^ 2", 0, &[]), -4.0);
        assert_eq!(at("7 / 2", 0, &[]), 3.5);
        assert_eq!(at("1.5e-1 * 2E1", 0, &[]), 3.0);
    }

    #[test]
    fn step_and_parameters() {
        let k = 3usize;
        let v = at("(1 + 0.2*sin(k)) * (0.6 + theta1)", k, &[0.4]);
        assert_eq!(v, (1.0 + 0.2 * 3f64.sin()) * (0.6 + 0.4));
        assert_eq!(at("(0.1*arctan(k))^2", 2, &[]), (0.1 * 2f64.atan()).powi(2));
        assert_eq!(Expr::parse("theta6 + theta2").unwrap().params_needed(), 6);
    }

    #[test]
    fn piecewise_with_conditions() {
        let src = "if(k <= 7, -4, if(k <= 9, -4 + 3.5*(k-7), 3))";
        assert_eq!(at(src, 1, &[]), -4.0);
        assert_eq!(at(src, 8, &[]), -0.5);
        assert_eq!(at(src, 12, &[]), 3.0);
        assert_eq!(at("k > 2 && k < 5", 3, &[]), 1.0);
        assert_eq!(at("k > 2 && k < 5", 5, &[]), 0.0);
        assert_eq!(at("k == 1 || k == 2", 2, &[]), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Expr::parse("foo + 1"), Err(ExprError::Name(_))));
        assert!(matches!(Expr::parse("theta0"), Err(ExprError::Name(_))));
        assert!(matches!(Expr::parse("sin(1, 2)"), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("(1"), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("1 2"), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("1 # 2"), Err(ExprError::Char { .. })));
        let e = Expr::parse("theta3").unwrap();
        assert!(matches!(e.eval(0, &[1.0]), Err(ExprError::Parameter { .. })));
    }
}
