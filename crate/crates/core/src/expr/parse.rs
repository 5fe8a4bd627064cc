//! Recursive-descent parser for the expression grammar.
//!
//! Precedence, tightest first: parentheses and function application, `^`
//! (right-associative), unary `-`, `*` `/`, `+` `-`. Errors carry the byte
//! offset into the source string.

use super::{Func, Node};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: unexpected character '{ch}'")]
    UnexpectedChar { offset: usize, ch: char },
    #[error("syntax error at byte {offset}: unexpected '{token}'")]
    UnexpectedToken { offset: usize, token: String },
    #[error("syntax error at byte {offset}: unexpected end of input")]
    UnexpectedEnd { offset: usize },
    #[error("syntax error at byte {offset}: invalid number literal '{text}'")]
    InvalidNumber { offset: usize, text: String },
    #[error("syntax error at byte {offset}: expected '{expected}'")]
    Expected { offset: usize, expected: char },
    #[error("unknown identifier \"{name}\" at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("\"{name}\" is applied as a function but is not one (at byte {offset})")]
    UnknownFunction { offset: usize, name: String },
    #[error("variable name \"{name}\" shadows a built-in function")]
    ReservedVariable { name: String },
    #[error("duplicate variable name \"{name}\"")]
    DuplicateVariable { name: String },
    #[error("invalid variable name \"{name}\"")]
    InvalidVariable { name: String },
}

pub(super) fn check_vars(vars: &[String]) -> Result<(), ParseError> {
    for (i, v) in vars.iter().enumerate() {
        if !is_ident(v) {
            return Err(ParseError::InvalidVariable { name: v.clone() });
        }
        if Func::from_name(v).is_some() {
            return Err(ParseError::ReservedVariable { name: v.clone() });
        }
        if vars[..i].contains(v) {
            return Err(ParseError::DuplicateVariable { name: v.clone() });
        }
    }
    Ok(())
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(t) = lx.next_token()? {
            out.push(t);
        }
        Ok(out)
    }

    fn next_token(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = bytes[self.pos] as char;
        let tok = match c {
            '+' => {
                self.pos += 1;
                Tok::Plus
            }
            '-' => {
                self.pos += 1;
                Tok::Minus
            }
            '*' => {
                self.pos += 1;
                Tok::Star
            }
            '/' => {
                self.pos += 1;
                Tok::Slash
            }
            '^' => {
                self.pos += 1;
                Tok::Caret
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            c if c.is_ascii_digit() || c == '.' => self.lex_number(start)?,
            c if c.is_ascii_alphabetic() || c == '_' => {
                while self.pos < bytes.len()
                    && ((bytes[self.pos] as char).is_ascii_alphanumeric()
                        || bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(self.src[start..self.pos].to_owned())
            }
            other => {
                return Err(ParseError::UnexpectedChar {
                    offset: start,
                    ch: other,
                })
            }
        };
        Ok(Some((tok, start)))
    }

    fn lex_number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let bytes = self.src.as_bytes();
        let mut saw_digit = false;
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
            saw_digit = true;
        }
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
                saw_digit = true;
            }
        }
        if !saw_digit {
            return Err(ParseError::InvalidNumber {
                offset: start,
                text: self.src[start..self.pos].to_owned(),
            });
        }
        // exponent part: e or E, optional sign, digits
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. "2e" where e is an identifier)
                self.pos = mark;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError::InvalidNumber {
                offset: start,
                text: text.to_owned(),
            })
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    vars: &'a [String],
    end: usize,
}

pub(super) fn parse(src: &str, vars: &[String]) -> Result<Node, ParseError> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser {
        toks,
        idx: 0,
        vars,
        end: src.len(),
    };
    let node = p.expr()?;
    if let Some((tok, off)) = p.peek_tok() {
        return Err(ParseError::UnexpectedToken {
            offset: off,
            token: tok_text(&tok),
        });
    }
    Ok(node)
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("{:?}", v),
        Tok::Ident(s) => s.clone(),
        Tok::Plus => "+".into(),
        Tok::Minus => "-".into(),
        Tok::Star => "*".into(),
        Tok::Slash => "/".into(),
        Tok::Caret => "^".into(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
    }
}

impl<'a> Parser<'a> {
    fn peek_tok(&self) -> Option<(Tok, usize)> {
        self.toks.get(self.idx).cloned()
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some((tok, _)) = self.peek_tok() {
            match tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        while let Some((tok, _)) = self.peek_tok() {
            match tok {
                Tok::Star => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    // factor := '-' factor | power
    fn factor(&mut self) -> Result<Node, ParseError> {
        if let Some((Tok::Minus, _)) = self.peek_tok() {
            self.bump();
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    // power := atom ('^' factor)?   -- right-associative, exponent may carry
    // a unary minus
    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek_tok() {
            self.bump();
            let expo = self.factor()?;
            return Ok(fold_power(base, expo));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.bump() {
            None => Err(ParseError::UnexpectedEnd { offset: self.end }),
            Some((Tok::Num(v), _)) => Ok(Node::Lit(v)),
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    Some((tok, off)) => Err(ParseError::UnexpectedToken {
                        offset: off,
                        token: tok_text(&tok),
                    }),
                    None => Err(ParseError::Expected {
                        offset: self.end,
                        expected: ')',
                    }),
                }
            }
            Some((Tok::Ident(name), off)) => {
                if let Some((Tok::LParen, _)) = self.peek_tok() {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction {
                            offset: off,
                            name: name.clone(),
                        })?;
                    self.bump(); // '('
                    let arg = self.expr()?;
                    match self.bump() {
                        Some((Tok::RParen, _)) => Ok(Node::Fn1(func, Box::new(arg))),
                        Some((tok, off)) => Err(ParseError::UnexpectedToken {
                            offset: off,
                            token: tok_text(&tok),
                        }),
                        None => Err(ParseError::Expected {
                            offset: self.end,
                            expected: ')',
                        }),
                    }
                } else {
                    match self.vars.iter().position(|v| *v == name) {
                        Some(i) => Ok(Node::Var(i)),
                        None => Err(ParseError::UnknownIdentifier { offset: off, name }),
                    }
                }
            }
            Some((tok, off)) => Err(ParseError::UnexpectedToken {
                offset: off,
                token: tok_text(&tok),
            }),
        }
    }
}

/// Folds constant exponents into dedicated power nodes so that integer powers
/// of negative bases evaluate without going through exp/log.
fn fold_power(base: Node, expo: Node) -> Node {
    if let Some(c) = const_value(&expo) {
        if c.is_finite() {
            if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
                return Node::PowI(Box::new(base), c as i32);
            }
            return Node::PowC(Box::new(base), c);
        }
    }
    Node::Pow(Box::new(base), Box::new(expo))
}

fn const_value(n: &Node) -> Option<f64> {
    match n {
        Node::Lit(v) => Some(*v),
        Node::Var(_) => None,
        Node::Neg(a) => Some(-const_value(a)?),
        Node::Add(a, b) => Some(const_value(a)? + const_value(b)?),
        Node::Sub(a, b) => Some(const_value(a)? - const_value(b)?),
        Node::Mul(a, b) => Some(const_value(a)? * const_value(b)?),
        Node::Div(a, b) => {
            let d = const_value(b)?;
            if d == 0.0 {
                None
            } else {
                Some(const_value(a)? / d)
            }
        }
        Node::PowI(a, k) => Some(const_value(a)?.powi(*k)),
        Node::PowC(a, c) => Some(const_value(a)?.powf(*c)),
        Node::Pow(a, b) => Some(const_value(a)?.powf(const_value(b)?)),
        Node::Fn1(f, a) => {
            let v = const_value(a)?;
            Some(match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Tan => v.tan(),
                Func::Exp => v.exp(),
                Func::Log => v.ln(),
                Func::Sqrt => v.sqrt(),
                Func::Abs => v.abs(),
            })
        }
    }
}
