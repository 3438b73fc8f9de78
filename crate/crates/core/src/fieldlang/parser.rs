//! Recursive-descent parser.
//!
//! ```text
//! field   := expr (';' expr)*
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```

use super::{BinOp, Expr, FieldAst, Func, ParseError, ScalarField};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Semi,
    End,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            let Some(&c) = self.chars.get(self.pos) else {
                out.push((Tok::End, start));
                return Ok(out);
            };
            let tok = match c {
                '0'..='9' | '.' => self.number()?,
                'a'..='z' | 'A'..='Z' | '_' => {
                    while self
                        .chars
                        .get(self.pos)
                        .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_')
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(self.chars[start..self.pos].iter().collect())
                }
                '+' | '-' | '*' | '/' | '^' => {
                    self.pos += 1;
                    Tok::Op(c)
                }
                '(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                ')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                ';' => {
                    self.pos += 1;
                    Tok::Semi
                }
                other => {
                    return Err(ParseError::Syntax {
                        pos: start,
                        msg: format!("unexpected character `{other}`"),
                    })
                }
            };
            out.push((tok, start));
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.chars.get(lx.pos).is_some_and(char::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                pos: start,
                msg: "malformed number".into(),
            });
        }
        if matches!(self.chars.get(self.pos), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.chars.get(self.pos), Some('+' | '-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // not an exponent; leave `e` for the identifier rule
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse().map(Tok::Num).map_err(|_| ParseError::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })
    }
}

struct Parser<'p> {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    dim: usize,
    params: &'p [&'p str],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.idx].0
    }

    fn pos(&self) -> usize {
        self.toks[self.idx].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Semi => "`;`".into(),
        };
        ParseError::Syntax {
            pos: self.pos(),
            msg: format!("expected {what}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            // right-associative; the exponent may carry its own sign
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.pos();
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownIdent { pos, name })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                self.variable(name, pos)
            }
            _ => Err(self.unexpected("a number, variable, function or `(`")),
        }
    }

    fn variable(&self, name: String, pos: usize) -> Result<Expr, ParseError> {
        if name == "t" {
            return Ok(Expr::Time);
        }
        if let Some(p) = self.params.iter().position(|p| *p == name) {
            return Ok(Expr::Param(p));
        }
        if let Some(idx) = name.strip_prefix('x') {
            if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) && !idx.starts_with('0') {
                let k: usize = idx.parse().map_err(|_| ParseError::UnknownIdent {
                    pos,
                    name: name.clone(),
                })?;
                if k > self.dim {
                    return Err(ParseError::IndexOutOfRange {
                        pos,
                        name,
                        dim: self.dim,
                    });
                }
                return Ok(Expr::State(k - 1));
            }
        }
        Err(ParseError::UnknownIdent { pos, name })
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected("`)`"))
        }
    }
}

/// Parse a `dim`-dimensional field over `t` and `x1..x{dim}`.
pub fn parse(source: &str, dim: usize) -> Result<FieldAst, ParseError> {
    parse_with_params(source, dim, &[])
}

/// Parse a field that may also reference the named parameters.
pub fn parse_with_params(source: &str, dim: usize, params: &[&str]) -> Result<FieldAst, ParseError> {
    let exprs = parse_exprs(source, dim, params)?;
    if exprs.len() != dim {
        return Err(ParseError::WrongCount {
            expected: dim,
            found: exprs.len(),
        });
    }
    Ok(FieldAst::from_exprs(
        dim,
        exprs,
        params.iter().map(|s| s.to_string()).collect(),
    ))
}

/// Parse one real-valued expression over `t` and `x1..x{dim}`.
pub fn parse_scalar(source: &str, dim: usize) -> Result<ScalarField, ParseError> {
    let mut exprs = parse_exprs(source, dim, &[])?;
    if exprs.len() != 1 {
        return Err(ParseError::WrongCount {
            expected: 1,
            found: exprs.len(),
        });
    }
    Ok(ScalarField::new(dim, exprs.remove(0)))
}

fn parse_exprs(source: &str, dim: usize, params: &[&str]) -> Result<Vec<Expr>, ParseError> {
    if dim == 0 {
        return Err(ParseError::WrongCount { expected: 0, found: 1 });
    }
    let toks = Lexer::new(source).tokens()?;
    let mut p = Parser {
        toks,
        idx: 0,
        dim,
        params,
    };
    let mut exprs = vec![p.expr()?];
    loop {
        match p.peek() {
            Tok::Semi => {
                p.bump();
                exprs.push(p.expr()?);
            }
            Tok::End => break,
            _ => return Err(p.unexpected("an operator, `;` or end of input")),
        }
    }
    Ok(exprs)
}
