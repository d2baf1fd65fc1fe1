//! Tiny expression evaluator for problem configuration files.
//!
//! Supports the variables `x`, `y`, `z`, `t`, the constant `pi`, the usual
//! arithmetic operators with `^` for powers, and a small set of functions.
//! Expressions are parsed once into an AST and evaluated per point.

use crate::vec3::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sinh,
    Cosh,
    Tanh,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: Vec3, t: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x[0],
            Expr::Var(Var::Y) => x[1],
            Expr::Var(Var::Z) => x[2],
            Expr::Var(Var::T) => t,
            Expr::Neg(e) => -e.eval(x, t),
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, b) => a.eval(x, t).powf(b.eval(x, t)),
            Expr::Min(a, b) => a.eval(x, t).min(b.eval(x, t)),
            Expr::Max(a, b) => a.eval(x, t).max(b.eval(x, t)),
            Expr::Call(f, e) => {
                let v = e.eval(x, t);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                    Func::Sinh => v.sinh(),
                    Func::Cosh => v.cosh(),
                    Func::Tanh => v.tanh(),
                }
            }
        }
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        src,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(Error::Expr(format!(
            "trailing input at token {} in '{src}'",
            p.pos
        )));
    }
    Ok(e)
}

/// Parses `(e1, e2, e3)` into three component expressions.
pub fn parse_vector(src: &str) -> Result<[Expr; 3]> {
    let inner = src
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Expr(format!("vector '{src}' must be written as (ex, ey, ez)")))?;
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth = depth.checked_sub(1).ok_or_else(|| {
                    Error::Expr(format!("unbalanced parentheses in '{src}'"))
                })?
            }
            ',' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    if parts.len() != 3 {
        return Err(Error::Expr(format!(
            "vector '{src}' has {} components, expected 3",
            parts.len()
        )));
    }
    Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?])
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' => i += 1,
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| Error::Expr(format!("bad number '{text}' in '{src}'")))?;
                out.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(bytes[start..i].iter().collect()));
            }
            '+' | '-' | '*' | '/' | '^' => {
                out.push(Tok::Op(c));
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            _ => return Err(Error::Expr(format!("unexpected character '{c}' in '{src}'"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            other => Err(Error::Expr(format!(
                "expected {tok:?}, found {other:?} in '{}'",
                self.src
            ))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.bump();
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.bump();
            let rhs = self.factor()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    // unary minus binds weaker than '^', so -2^2 = -(2^2)
    fn factor(&mut self) -> Result<Expr> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if let Some(Tok::Op('+')) = self.peek() {
            self.bump();
            return self.factor();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.bump();
            let exp = self.factor()?; // right associative
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "y" => Ok(Expr::Var(Var::Y)),
                "z" => Ok(Expr::Var(Var::Z)),
                "t" => Ok(Expr::Var(Var::T)),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "min" | "max" | "pow" => {
                    self.expect(Tok::LParen)?;
                    let a = self.expr()?;
                    self.expect(Tok::Comma)?;
                    let b = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(match name.as_str() {
                        "min" => Expr::Min(Box::new(a), Box::new(b)),
                        "max" => Expr::Max(Box::new(a), Box::new(b)),
                        _ => Expr::Pow(Box::new(a), Box::new(b)),
                    })
                }
                _ => {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "tan" => Func::Tan,
                        "exp" => Func::Exp,
                        "ln" | "log" => Func::Ln,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        "sinh" => Func::Sinh,
                        "cosh" => Func::Cosh,
                        "tanh" => Func::Tanh,
                        _ => {
                            return Err(Error::Expr(format!(
                                "unknown identifier '{name}' in '{}'",
                                self.src
                            )))
                        }
                    };
                    self.expect(Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Call(f, Box::new(arg)))
                }
            },
            other => Err(Error::Expr(format!(
                "unexpected token {other:?} in '{}'",
                self.src
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: Vec3, t: f64) -> f64 {
        parse(src).unwrap().eval(x, t)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1+2*3", [0.0; 3], 0.0), 7.0);
        assert_eq!(ev("(1+2)*3", [0.0; 3], 0.0), 9.0);
        assert_eq!(ev("2^3^2", [0.0; 3], 0.0), 512.0); // right assoc
        assert_eq!(ev("-2^2", [0.0; 3], 0.0), -4.0);
        assert_eq!(ev("6/3/2", [0.0; 3], 0.0), 1.0);
    }

    #[test]
    fn variables_and_functions() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ev("x+2*y+3*z", x, 0.0), 14.0);
        assert!((ev("sqrt(x^2+y^2+z^2)", x, 0.0) - 14.0f64.sqrt()).abs() < 1e-15);
        assert!((ev("sin(pi/2)", x, 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("exp(-2*t)", x, 0.5) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(ev("min(x, y) + max(y, z)", x, 0.0), 4.0);
        assert_eq!(ev("pow(2, 10)", x, 0.0), 1024.0);
    }

    #[test]
    fn vector_parsing() {
        let v = parse_vector("(-0.2*pi*y, 0.2*pi*x, 0)").unwrap();
        let x = [1.0, 2.0, 0.0];
        assert!((v[0].eval(x, 0.0) + 0.4 * std::f64::consts::PI).abs() < 1e-15);
        assert!((v[1].eval(x, 0.0) - 0.2 * std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(v[2].eval(x, 0.0), 0.0);
        assert!(parse_vector("(1, 2)").is_err());
        assert!(parse_vector("1, 2, 3").is_err());
    }

    #[test]
    fn errors() {
        assert!(parse("1 +").is_err());
        assert!(parse("foo(1)").is_err());
        assert!(parse("1 $ 2").is_err());
        assert!(parse("(1").is_err());
    }
}
