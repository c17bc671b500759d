//! Arithmetic expressions in `x` and `y` for boundary traces.
//!
//! Grammar: `+ - * / ^`, parentheses, numbers, the variables `x`, `y`, `r`,
//! `theta`, the constants `pi` and `e`, and the functions below. `^` binds
//! tighter than unary minus and associates to the right.

use std::fmt;

#[derive(Clone, Debug)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Var {
    X,
    Y,
    R,
    Theta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug)]
enum Func {
    Unary(fn(f64) -> f64),
    Binary(fn(f64, f64) -> f64),
}

const UNARY: &[(&str, fn(f64) -> f64)] = &[
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("tan", f64::tan),
    ("asin", f64::asin),
    ("acos", f64::acos),
    ("atan", f64::atan),
    ("sinh", f64::sinh),
    ("cosh", f64::cosh),
    ("tanh", f64::tanh),
    ("exp", f64::exp),
    ("ln", f64::ln),
    ("log", f64::ln),
    ("log10", f64::log10),
    ("sqrt", f64::sqrt),
    ("abs", f64::abs),
];

const BINARY: &[(&str, fn(f64, f64) -> f64)] = &[
    ("atan2", f64::atan2),
    ("pow", f64::powf),
    ("min", f64::min),
    ("max", f64::max),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos + 1, self.msg)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(s: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let b: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == '.') {
                i += 1;
            }
            // exponent part, only when followed by digits
            if i < b.len() && (b[i] == 'e' || b[i] == 'E') {
                let mut k = i + 1;
                if k < b.len() && (b[k] == '+' || b[k] == '-') {
                    k += 1;
                }
                if k < b.len() && b[k].is_ascii_digit() {
                    i = k;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = b[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ParseError {
                pos: start,
                msg: format!("bad number {text:?}"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(b[start..i].iter().collect())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(ParseError {
                pos: i,
                msg: format!("unexpected character {c:?}"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.at += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if self.eat('(') {
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(')') {
                        return self.err("expected ')' after arguments");
                    }
                    return call(&name, args, pos);
                }
                match name.as_str() {
                    "x" => Ok(Node::Var(Var::X)),
                    "y" => Ok(Node::Var(Var::Y)),
                    "r" => Ok(Node::Var(Var::R)),
                    "theta" => Ok(Node::Var(Var::Theta)),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(ParseError {
                        pos,
                        msg: format!("unknown variable {name:?} (use x, y, r, theta, pi, e)"),
                    }),
                }
            }
            Some(Tok::Sym(c)) => self.err(format!("unexpected {c:?}")),
            None => self.err("unexpected end of expression"),
        }
    }
}

fn call(name: &str, args: Vec<Node>, pos: usize) -> Result<Node, ParseError> {
    let arity = |want: usize| -> Result<(), ParseError> {
        if args.len() == want {
            Ok(())
        } else {
            Err(ParseError {
                pos,
                msg: format!("{name} takes {want} argument(s), got {}", args.len()),
            })
        }
    };
    if let Some((_, f)) = UNARY.iter().find(|(n, _)| *n == name) {
        arity(1)?;
        return Ok(Node::Call(Func::Unary(*f), args));
    }
    if let Some((_, f)) = BINARY.iter().find(|(n, _)| *n == name) {
        arity(2)?;
        return Ok(Node::Call(Func::Binary(*f), args));
    }
    Err(ParseError {
        pos,
        msg: format!("unknown function {name:?}"),
    })
}

/// A parsed expression.
#[derive(Clone, Debug)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(s: &str) -> Result<Expr, ParseError> {
        let toks = lex(s)?;
        let mut p = Parser {
            toks,
            at: 0,
            end: s.chars().count(),
        };
        let root = p.expr()?;
        if p.at != p.toks.len() {
            return p.err("unexpected trailing input");
        }
        Ok(Expr {
            root,
            source: s.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        eval(&self.root, x, y)
    }
}

fn eval(n: &Node, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(Var::X) => x,
        Node::Var(Var::Y) => y,
        Node::Var(Var::R) => x.hypot(y),
        Node::Var(Var::Theta) => y.atan2(x),
        Node::Neg(a) => -eval(a, x, y),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, y), eval(b, x, y));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(Func::Unary(f), args) => f(eval(&args[0], x, y)),
        Node::Call(Func::Binary(f), args) => f(eval(&args[0], x, y), eval(&args[1], x, y)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, y)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("-2^2", 0.0, 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("2^-1", 0.0, 0.0), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        let (x, y) = (0.3, -0.4);
        assert!((ev("x^3 - 3*x*y^2", x, y) - (x * x * x - 3.0 * x * y * y)).abs() < 1e-15);
        assert!((ev("r", x, y) - 0.5).abs() < 1e-15);
        assert!((ev("cos(theta) * r", x, y) - x).abs() < 1e-15);
        assert!((ev("atan2(y, x)", x, y) - y.atan2(x)).abs() < 1e-15);
        assert!((ev("exp(1) - e", x, y)).abs() < 1e-15);
        assert!((ev("sin(pi/2)", x, y) - 1.0).abs() < 1e-15);
        assert_eq!(ev("1.5e-3 * 2", x, y), 3e-3);
    }

    #[test]
    fn errors_carry_position() {
        let e = Expr::parse("x +* 2").unwrap_err();
        assert_eq!(e.pos, 3);
        assert!(Expr::parse("z + 1").unwrap_err().msg.contains("unknown variable"));
        assert!(Expr::parse("sin(x, y)").unwrap_err().msg.contains("takes 1"));
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("x y").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("x $ 1").is_err());
    }
}
