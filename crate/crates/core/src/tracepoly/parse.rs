//! Text grammar for potentials and observables.
//!
//! Terms look like `0.5*tr(x1^2) + 0.25*tr(x1 x2 x1 x2)`; operator-valued
//! terms carry a bare word factor, e.g. `tr(x1^2)*x1`. Letters inside
//! `tr(...)` are whitespace-separated, `^k` repeats a letter, and numeric
//! factors multiply the coefficient. `parse_self_adjoint` additionally
//! rejects polynomials with `f != f*`.

use num_complex::Complex64;

use super::{OperatorTracePoly, ScalarTracePoly, TraceMonomial, TracedWord, Word};
use crate::error::CoreError;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Tr,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Atom { var: usize, pow: usize },
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, start: usize, message: &str) -> CoreError {
        let end = (start + 12).min(self.src.len());
        CoreError::Parse {
            offset: start,
            token: self.src[start..end].trim_end().to_string(),
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<Option<(usize, Token)>, CoreError> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let b = self.bytes[self.pos];
        let tok = match b {
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_digit()
                        || self.bytes[end] == b'.'
                        || self.bytes[end] == b'e'
                        || self.bytes[end] == b'E'
                        || ((self.bytes[end] == b'+' || self.bytes[end] == b'-')
                            && end > self.pos
                            && (self.bytes[end - 1] == b'e' || self.bytes[end - 1] == b'E')))
                {
                    end += 1;
                }
                let text = &self.src[self.pos..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| self.err(start, "invalid number"))?;
                self.pos = end;
                Token::Number(value)
            }
            b't' => {
                if self.src[self.pos..].starts_with("tr") {
                    self.pos += 2;
                    Token::Tr
                } else {
                    return Err(self.err(start, "expected `tr`"));
                }
            }
            b'x' => {
                self.pos += 1;
                let dstart = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos == dstart {
                    return Err(self.err(start, "variable needs an index, e.g. `x1`"));
                }
                let var: usize = self.src[dstart..self.pos]
                    .parse()
                    .map_err(|_| self.err(start, "invalid variable index"))?;
                if var == 0 {
                    return Err(self.err(start, "variable indices start at 1"));
                }
                let mut pow = 1usize;
                if self.pos < self.bytes.len() && self.bytes[self.pos] == b'^' {
                    self.pos += 1;
                    let pstart = self.pos;
                    while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    if self.pos == pstart {
                        return Err(self.err(start, "`^` needs an exponent"));
                    }
                    pow = self.src[pstart..self.pos]
                        .parse()
                        .map_err(|_| self.err(start, "invalid exponent"))?;
                }
                Token::Atom { var: var - 1, pow }
            }
            _ => return Err(self.err(start, "unexpected character")),
        };
        Ok(Some((start, tok)))
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>, CoreError> {
    let mut lx = Lexer::new(src);
    let mut out = Vec::new();
    while let Some(t) = lx.next()? {
        out.push(t);
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(usize, Token)>,
    idx: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn bump(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.idx).cloned();
        self.idx += 1;
        t
    }

    fn err_here(&self, message: &str) -> CoreError {
        match self.tokens.get(self.idx) {
            Some((off, tok)) => CoreError::Parse {
                offset: *off,
                token: format!("{tok:?}"),
                message: message.to_string(),
            },
            None => CoreError::Parse {
                offset: self.src.len(),
                token: "<end of input>".to_string(),
                message: message.to_string(),
            },
        }
    }

    fn expect(&mut self, want: Token, message: &str) -> Result<(), CoreError> {
        match self.bump() {
            Some((_, t)) if t == want => Ok(()),
            _ => {
                self.idx = self.idx.saturating_sub(1);
                Err(self.err_here(message))
            }
        }
    }

    /// word := atom+ (inside tr parentheses, whitespace separated)
    fn word(&mut self) -> Result<Word, CoreError> {
        let mut letters = Vec::new();
        loop {
            match self.peek() {
                Some(Token::Atom { .. }) => {
                    if let Some((_, Token::Atom { var, pow })) = self.bump() {
                        letters.extend(std::iter::repeat_n(var as u8, pow));
                    }
                }
                _ => break,
            }
        }
        if letters.is_empty() {
            return Err(self.err_here("expected a word of variables inside tr(...)"));
        }
        Ok(Word(letters))
    }

    /// term := factor ('*' factor)*
    /// factor := number | tr '(' word ')' | atom
    fn term(&mut self) -> Result<(Complex64, Vec<TracedWord>, Word), CoreError> {
        let mut coeff = Complex64::ONE;
        let mut traced = Vec::new();
        let mut opword = Word::empty();
        loop {
            match self.peek() {
                Some(Token::Number(_)) => {
                    if let Some((_, Token::Number(v))) = self.bump() {
                        coeff *= Complex64::new(v, 0.0);
                    }
                }
                Some(Token::Tr) => {
                    self.bump();
                    self.expect(Token::LParen, "expected `(` after tr")?;
                    let w = self.word()?;
                    self.expect(Token::RParen, "expected `)` closing tr(...)")?;
                    if let Some(tw) = TracedWord::new(w) {
                        traced.push(tw);
                    }
                }
                Some(Token::Atom { .. }) => {
                    if let Some((_, Token::Atom { var, pow })) = self.bump() {
                        opword
                            .0
                            .extend(std::iter::repeat_n(var as u8, pow));
                    }
                }
                _ => return Err(self.err_here("expected a number, tr(...), or a variable")),
            }
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                }
                _ => break,
            }
        }
        Ok((coeff, traced, opword))
    }

    fn expression(&mut self) -> Result<OperatorTracePoly, CoreError> {
        let mut terms: Vec<(TraceMonomial, Word, Complex64)> = Vec::new();
        let mut sign = Complex64::ONE;
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            sign = -Complex64::ONE;
        } else if matches!(self.peek(), Some(Token::Plus)) {
            self.bump();
        }
        loop {
            let (coeff, traced, opword) = self.term()?;
            terms.push((TraceMonomial::from_words(traced), opword, sign * coeff));
            match self.bump() {
                None => break,
                Some((_, Token::Plus)) => sign = Complex64::ONE,
                Some((_, Token::Minus)) => sign = -Complex64::ONE,
                Some(_) => {
                    self.idx -= 1;
                    return Err(self.err_here("expected `+`, `-`, or end of input"));
                }
            }
        }
        let nvars = terms
            .iter()
            .map(|(m, w, _)| m.max_var().max(w.max_var()))
            .max()
            .unwrap_or(0);
        Ok(OperatorTracePoly::from_terms(terms, nvars))
    }
}

/// Parse an operator-valued trace polynomial.
pub fn parse_operator(src: &str) -> Result<OperatorTracePoly, CoreError> {
    let tokens = lex(src)?;
    if tokens.is_empty() {
        return Err(CoreError::Parse {
            offset: 0,
            token: String::new(),
            message: "empty input".to_string(),
        });
    }
    let mut p = Parser { src, tokens, idx: 0 };
    p.expression()
}

/// Parse a scalar trace polynomial; rejects terms with a bare word factor.
pub fn parse_scalar(src: &str) -> Result<ScalarTracePoly, CoreError> {
    let op = parse_operator(src)?;
    let nvars = op.nvars;
    let mut terms = Vec::new();
    for (key, c) in &op.terms {
        if !key.word.is_empty() {
            return Err(CoreError::Parse {
                offset: 0,
                token: key.word.to_string(),
                message: "operator-valued term in a scalar context".to_string(),
            });
        }
        terms.push((key.mono.clone(), *c));
    }
    Ok(ScalarTracePoly::from_terms(terms, nvars))
}

/// Parse a potential: scalar and self-adjoint.
pub fn parse_self_adjoint(src: &str) -> Result<ScalarTracePoly, CoreError> {
    let v = parse_scalar(src)?;
    if !v.is_self_adjoint() {
        return Err(CoreError::NotSelfAdjoint(src.trim().to_string()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quartic() {
        let v = parse_self_adjoint("0.5*tr(x1^2) + 0.1*tr(x1^4)").unwrap();
        assert_eq!(v.nvars, 1);
        assert_eq!(v.degree(), 4);
        assert_eq!(v.terms.len(), 2);
    }

    #[test]
    fn parses_coupled() {
        let v = parse_self_adjoint("0.5*tr(x1^2) + 0.5*tr(x2^2) + 0.5*tr(x1 x2)").unwrap();
        assert_eq!(v.nvars, 2);
        let mapped = parse_self_adjoint("0.5*tr(x1 x1)+0.5*tr(x2 x2)+0.5*tr(x2 x1)").unwrap();
        assert_eq!(v, mapped);
    }

    #[test]
    fn parses_operator_term() {
        let f = parse_operator("tr(x1^2)*x1").unwrap();
        assert_eq!(f.terms.len(), 1);
        let key = f.terms.keys().next().unwrap();
        assert_eq!(key.word.0, vec![0]);
        assert_eq!(key.mono.degree(), 2);
    }

    #[test]
    fn rejects_malformed_token() {
        let e = parse_scalar("0.5*tr(x1^2) + 0.25*tr(y1)").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("parse error"), "{msg}");
        assert!(msg.contains("y1"), "{msg}");
    }

    #[test]
    fn rejects_non_self_adjoint() {
        // tau(x1 x2 x3) alone is not self-adjoint
        let e = parse_self_adjoint("tr(x1 x2 x3)").unwrap_err();
        assert!(matches!(e, CoreError::NotSelfAdjoint(_)));
        // but the symmetrized version is
        parse_self_adjoint("tr(x1 x2 x3) + tr(x3 x2 x1)").unwrap();
    }

    #[test]
    fn rejects_operator_in_scalar_context() {
        assert!(parse_scalar("tr(x1^2)*x1").is_err());
    }

    #[test]
    fn whitespace_and_signs() {
        let v = parse_scalar(" - tr(x1 x1) + 2 * tr( x1 x1 ) ").unwrap();
        let expect = parse_scalar("tr(x1^2)").unwrap();
        assert_eq!(v, expect);
    }
}
