//! Recursive-descent parser for polynomial expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := number | ident | ident '^' integer | '(' expr ')' | '-' factor
//! ```

use crate::poly::Polynomial;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("unexpected {found} at position {pos}, expected {expected}")]
    Unexpected { found: String, expected: &'static str, pos: usize },
    #[error("bad number `{text}` at position {pos}")]
    BadNumber { text: String, pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(u32),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Int(v) => format!("integer {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            _ if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part, e.g. 5e11 or 1.5E-3
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s = &text[start..i];
                let tok = if s.bytes().all(|b| b.is_ascii_digit()) {
                    match s.parse::<u32>() {
                        Ok(v) => Tok::Int(v),
                        Err(_) => Tok::Num(s.parse::<f64>().map_err(|_| ParseError::BadNumber {
                            text: s.into(),
                            pos: start,
                        })?),
                    }
                } else {
                    Tok::Num(
                        s.parse::<f64>()
                            .map_err(|_| ParseError::BadNumber { text: s.into(), pos: start })?,
                    )
                };
                out.push((tok, start));
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(ParseError::Unexpected {
                    found: format!("character `{c}`"),
                    expected: "an expression",
                    pos: start,
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        ParseError::Unexpected { found: describe(self.peek()), expected, pos: self.pos() }
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.next();
                    let t = self.term()?;
                    acc = acc.add(&t).expect("same space");
                }
                Tok::Minus => {
                    self.next();
                    let t = self.term()?;
                    acc = acc.sub(&t).expect("same space");
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.factor()?;
        while *self.peek() == Tok::Star {
            self.next();
            let f = self.factor()?;
            acc = acc.mul(&f).expect("same space");
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial, ParseError> {
        let n = self.names.len();
        let (tok, pos) = self.next();
        match tok {
            Tok::Num(v) => Ok(Polynomial::constant(n, v)),
            Tok::Int(v) => Ok(Polynomial::constant(n, f64::from(v))),
            Tok::Minus => Ok(self.factor()?.scale(-1.0)),
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.next();
                Ok(e)
            }
            Tok::Ident(name) => {
                let idx = self
                    .names
                    .iter()
                    .position(|v| *v == name)
                    .ok_or(ParseError::UnknownIdentifier { name, pos })?;
                let v = Polynomial::var(n, idx);
                if *self.peek() == Tok::Caret {
                    self.next();
                    match self.next() {
                        (Tok::Int(e), _) => Ok(v.pow(e)),
                        (t, p) => Err(ParseError::Unexpected {
                            found: describe(&t),
                            expected: "an integer exponent",
                            pos: p,
                        }),
                    }
                } else {
                    Ok(v)
                }
            }
            t => Err(ParseError::Unexpected { found: describe(&t), expected: "a factor", pos }),
        }
    }
}

/// Parses `text` into a polynomial over `names` (in that variable order).
pub fn parse_expression(text: &str, names: &[String]) -> Result<Polynomial, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, names };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn linear_expression() {
        let p = parse_expression("-4*x + 2*y + u2", &names(&["x", "y", "u1", "u2"])).unwrap();
        assert_eq!(p.coeff(&Monomial(vec![1, 0, 0, 0])), -4.0);
        assert_eq!(p.coeff(&Monomial(vec![0, 1, 0, 0])), 2.0);
        assert_eq!(p.coeff(&Monomial(vec![0, 0, 0, 1])), 1.0);
        assert_eq!(p.coeff(&Monomial(vec![0, 0, 0, 0])), 0.0);
        assert_eq!(p.num_terms(), 3);
    }

    #[test]
    fn product_and_powers() {
        let p = parse_expression("x*(1.5 - y)", &names(&["x", "y"])).unwrap();
        assert_eq!(p.coeff(&Monomial(vec![1, 0])), 1.5);
        assert_eq!(p.coeff(&Monomial(vec![1, 1])), -1.0);
        let c = parse_expression("x^3", &names(&["x"])).unwrap();
        assert_eq!(c.num_terms(), 1);
        assert_eq!(c.coeff(&Monomial(vec![3])), 1.0);
        let s = parse_expression("5e11*(x - 2.5E-1) - -x", &names(&["x"])).unwrap();
        assert_eq!(s.coeff(&Monomial(vec![1])), 5e11 + 1.0);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_expression("x + z", &names(&["x"])).unwrap_err();
        assert_eq!(e, ParseError::UnknownIdentifier { name: "z".into(), pos: 4 });
        assert!(matches!(
            parse_expression("2 x", &names(&["x"])),
            Err(ParseError::Unexpected { pos: 2, .. })
        ));
        assert!(matches!(
            parse_expression("(x + 1", &names(&["x"])),
            Err(ParseError::Unexpected { pos: 6, .. })
        ));
        assert!(parse_expression("x^1.5", &names(&["x"])).is_err());
        assert!(parse_expression("x $ 1", &names(&["x"])).is_err());
    }
}
