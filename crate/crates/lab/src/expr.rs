//! Arithmetic expressions over coordinates, used for coefficient fields in configs.
//!
//! Grammar: numbers, `pi`, variables `x1..xn` (and optionally `h`), `+ - * / ^`,
//! unary minus, parentheses, and the functions `sin`, `cos`, `abs`. `^` binds
//! tighter than unary minus and associates to the right.

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Coord(usize),
    H,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Abs,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.position)
    }
}

impl std::error::Error for ParseError {}

/// A parsed expression. `dim` bounds the admissible coordinate indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
    uses_h: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(usize, usize),
    Sym(u8),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
    dim: usize,
    allow_h: bool,
    uses_h: bool,
}

impl Expr {
    pub fn parse(src: &str, dim: usize, allow_h: bool) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src,
            pos: 0,
            tok: Tok::End,
            tok_start: 0,
            dim,
            allow_h,
            uses_h: false,
        };
        p.advance()?;
        let root = p.sum()?;
        if p.tok != Tok::End {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            root,
            source: src.to_string(),
            uses_h: p.uses_h,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_h(&self) -> bool {
        self.uses_h
    }

    /// Free of coordinates (it may still depend on `h`).
    pub fn is_constant_in_x(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) | Node::H => true,
                Node::Coord(_) => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    pub fn eval(&self, x: &[f64], h: f64) -> f64 {
        eval(&self.root, x, h)
    }
}

fn eval(n: &Node, x: &[f64], h: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Coord(i) => x[*i],
        Node::H => h,
        Node::Neg(a) => -eval(a, x, h),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, h), eval(b, x, h));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, x, h);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Abs => a.abs(),
            }
        }
    }
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ParseError {
        ParseError {
            position: self.tok_start,
            message: msg.to_string(),
        }
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut q = self.pos + 1;
                if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                    q += 1;
                }
                if q < bytes.len() && bytes[q].is_ascii_digit() {
                    while q < bytes.len() && bytes[q].is_ascii_digit() {
                        q += 1;
                    }
                    self.pos = q;
                }
            }
            let text = &self.src[start..self.pos];
            let v: f64 = text.parse().map_err(|_| self.error(&format!("bad number `{text}`")))?;
            self.tok = Tok::Num(v);
        } else if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            self.tok = Tok::Ident(start, self.pos);
        } else if b"+-*/^()".contains(&c) {
            self.pos += 1;
            self.tok = Tok::Sym(c);
        } else {
            return Err(self.error(&format!("unexpected character `{}`", c as char)));
        }
        Ok(())
    }

    fn eat(&mut self, sym: u8) -> Result<bool, ParseError> {
        if self.tok == Tok::Sym(sym) {
            self.advance()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat(b'+')? {
                Op::Add
            } else if self.eat(b'-')? {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*')? {
                Op::Mul
            } else if self.eat(b'/')? {
                Op::Div
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-')? {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+')? {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^')? {
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.tok {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Num(v))
            }
            Tok::Sym(b'(') => {
                self.advance()?;
                let inner = self.sum()?;
                if !self.eat(b')')? {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Tok::Ident(a, b) => {
                let name = &self.src[a..b];
                let at = self.tok_start;
                self.advance()?;
                let func = match name {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "abs" => Some(Func::Abs),
                    _ => None,
                };
                if let Some(f) = func {
                    if !self.eat(b'(')? {
                        return Err(self.error(&format!("expected `(` after `{name}`")));
                    }
                    let arg = self.sum()?;
                    if !self.eat(b')')? {
                        return Err(self.error("expected `)`"));
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                if name == "h" && self.allow_h {
                    self.uses_h = true;
                    return Ok(Node::H);
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx >= 1 && idx <= self.dim {
                        return Ok(Node::Coord(idx - 1));
                    }
                    return Err(ParseError {
                        position: at,
                        message: format!("`{name}` out of range: coordinates are x1..x{}", self.dim),
                    });
                }
                Err(ParseError {
                    position: at,
                    message: format!("unknown identifier `{name}`"),
                })
            }
            Tok::Sym(c) => Err(self.error(&format!("unexpected `{}`", c as char))),
            Tok::End => Err(self.error("unexpected end of expression")),
        }
    }
}
