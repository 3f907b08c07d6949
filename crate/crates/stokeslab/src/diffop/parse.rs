//! Recursive-descent parser for the operator grammar.
//!
//! ```text
//! expr     := ["+"|"-"] term (("+"|"-") term)*
//! term     := factor (("*"|"/") factor)*
//! factor   := base ("^" exponent)?
//! base     := "D" | "delta" | "z" | number | complex | "(" expr ")"
//! exponent := ["-"] integer | "(" ["-"] integer "/" integer ")"
//! number   := decimal
//! complex  := "(" decimal ("+"|"-") decimal "i" ")"
//! ```
//!
//! Division is admitted only by constants and by `z`-monomials, which keeps
//! every intermediate value a genuine operator polynomial. Rational powers
//! are admitted only on `z`-monomials with unit coefficient.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rational::RationalExp;
use crate::series::PuiseuxSeries;

use super::{BasePoint, DiffOp, OperatorPoly};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    D,
    Delta,
    Z,
    Imag,
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut out = vec![];
    let mut line = 1usize;
    let mut col = 1usize;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        let (l, c) = (line, col);
        match ch {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            ch if ch.is_whitespace() => {}
            '+' => out.push(Spanned { tok: Tok::Plus, line: l, col: c }),
            '-' => out.push(Spanned { tok: Tok::Minus, line: l, col: c }),
            '*' => out.push(Spanned { tok: Tok::Star, line: l, col: c }),
            '/' => out.push(Spanned { tok: Tok::Slash, line: l, col: c }),
            '^' => out.push(Spanned { tok: Tok::Caret, line: l, col: c }),
            '(' => out.push(Spanned { tok: Tok::LParen, line: l, col: c }),
            ')' => out.push(Spanned { tok: Tok::RParen, line: l, col: c }),
            'D' => out.push(Spanned { tok: Tok::D, line: l, col: c }),
            'z' => out.push(Spanned { tok: Tok::Z, line: l, col: c }),
            'i' => out.push(Spanned { tok: Tok::Imag, line: l, col: c }),
            'd' => {
                let rest: String = chars[i..].iter().take(5).collect();
                if rest == "delta" {
                    out.push(Spanned { tok: Tok::Delta, line: l, col: c });
                    i += 5;
                    col += 5;
                    continue;
                }
                return Err(err(l, c, "unknown identifier, expected `delta`"));
            }
            ch if ch.is_ascii_digit() || ch == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // exponent part of a float literal
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
                let value: f64 = text
                    .parse()
                    .map_err(|_| err(l, c, format!("malformed number `{text}`")))?;
                col += i - start;
                out.push(Spanned { tok: Tok::Num(value), line: l, col: c });
                continue;
            }
            other => return Err(err(l, c, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|s| (s.line, s.col))
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let (l, c) = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(err(l, c, format!("expected {what}"))),
        }
    }

    fn expr(&mut self) -> Result<OperatorPoly> {
        let mut negate = false;
        match self.peek() {
            Some(Tok::Minus) => {
                self.bump();
                negate = true;
            }
            Some(Tok::Plus) => {
                self.bump();
            }
            _ => {}
        }
        let mut acc = self.term()?;
        if negate {
            acc = acc.neg();
        }
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    acc = acc.add(&self.term()?);
                }
                Some(Tok::Minus) => {
                    self.bump();
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<OperatorPoly> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    acc = acc.mul(&self.factor()?);
                }
                Some(Tok::Slash) => {
                    let (l, c) = self.here();
                    self.bump();
                    let rhs = self.factor()?;
                    acc = divide(acc, rhs).map_err(|msg| err(l, c, msg))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<OperatorPoly> {
        let base = self.base()?;
        if self.peek() == Some(&Tok::Caret) {
            let (l, c) = self.here();
            self.bump();
            let exp = self.exponent()?;
            return power(base, exp).map_err(|msg| err(l, c, msg));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<OperatorPoly> {
        let (l, c) = self.here();
        match self.bump() {
            Some(Tok::D) => Ok(OperatorPoly::derivation()),
            Some(Tok::Delta) => Ok(OperatorPoly(vec![
                PuiseuxSeries::zero(),
                PuiseuxSeries::monomial(Complex64::new(1.0, 0.0), RationalExp::ONE),
            ])),
            Some(Tok::Z) => Ok(OperatorPoly::from_series(PuiseuxSeries::monomial(
                Complex64::new(1.0, 0.0),
                RationalExp::ONE,
            ))),
            Some(Tok::Num(v)) => Ok(OperatorPoly::from_series(PuiseuxSeries::constant(
                Complex64::new(v, 0.0),
            ))),
            Some(Tok::LParen) => {
                if let Some(value) = self.complex_literal()? {
                    return Ok(OperatorPoly::from_series(PuiseuxSeries::constant(value)));
                }
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(err(l, c, "expected `D`, `delta`, `z`, a number, or `(`")),
        }
    }

    /// Tries `["-"] decimal ("+"|"-") decimal "i" ")"` right after a consumed `(`.
    fn complex_literal(&mut self) -> Result<Option<Complex64>> {
        let save = self.pos;
        let mut re_sign = 1.0;
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            re_sign = -1.0;
        }
        let re = match self.peek() {
            Some(Tok::Num(v)) => {
                let v = re_sign * *v;
                self.bump();
                v
            }
            _ => {
                self.pos = save;
                return Ok(None);
            }
        };
        let sign = match self.peek() {
            Some(Tok::Plus) => 1.0,
            Some(Tok::Minus) => -1.0,
            _ => {
                self.pos = save;
                return Ok(None);
            }
        };
        self.bump();
        let im = match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.bump();
                v
            }
            _ => {
                self.pos = save;
                return Ok(None);
            }
        };
        if self.peek() != Some(&Tok::Imag) {
            self.pos = save;
            return Ok(None);
        }
        self.bump();
        self.expect(Tok::RParen, "`)` after complex literal")?;
        Ok(Some(Complex64::new(re, sign * im)))
    }

    fn exponent(&mut self) -> Result<RationalExp> {
        let (l, c) = self.here();
        let mut sign = 1i64;
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            sign = -1;
        }
        match self.bump() {
            Some(Tok::Num(v)) => {
                integer(v, l, c).map(|n| RationalExp::from_integer(sign * n))
            }
            Some(Tok::LParen) => {
                let mut nsign = 1i64;
                if self.peek() == Some(&Tok::Minus) {
                    self.bump();
                    nsign = -1;
                }
                let (l1, c1) = self.here();
                let num = match self.bump() {
                    Some(Tok::Num(v)) => integer(v, l1, c1)?,
                    _ => return Err(err(l1, c1, "expected integer numerator")),
                };
                if self.peek() == Some(&Tok::RParen) {
                    self.bump();
                    return Ok(RationalExp::from_integer(sign * nsign * num));
                }
                self.expect(Tok::Slash, "`/` in rational exponent")?;
                let (l2, c2) = self.here();
                let den = match self.bump() {
                    Some(Tok::Num(v)) => integer(v, l2, c2)?,
                    _ => return Err(err(l2, c2, "expected integer denominator")),
                };
                self.expect(Tok::RParen, "`)` after rational exponent")?;
                Ok(RationalExp::new(sign * nsign * num, den))
            }
            _ => Err(err(l, c, "expected integer or rational exponent")),
        }
    }
}

fn integer(v: f64, line: usize, col: usize) -> Result<i64> {
    if v.fract() == 0.0 && v.abs() < 9e15 {
        Ok(v as i64)
    } else {
        Err(err(line, col, format!("expected an integer, found `{v}`")))
    }
}

/// A single-term exact series, if the value is one.
fn as_monomial(p: &OperatorPoly) -> Option<(Complex64, RationalExp)> {
    if p.0.len() == 1 && p.0[0].num_terms() == 1 && p.0[0].truncation().is_none() {
        p.0[0].leading().map(|(e, c)| (c, e))
    } else {
        None
    }
}

fn divide(lhs: OperatorPoly, rhs: OperatorPoly) -> std::result::Result<OperatorPoly, String> {
    let (c, e) = as_monomial(&rhs)
        .ok_or_else(|| "division is only defined by constants and z-monomials".to_string())?;
    if c == Complex64::new(0.0, 0.0) {
        return Err("division by zero".to_string());
    }
    let inv = PuiseuxSeries::monomial(Complex64::new(1.0, 0.0) / c, e.neg());
    Ok(OperatorPoly(
        lhs.0.iter().map(|s| s.mul(&inv)).collect(),
    ))
}

fn power(base: OperatorPoly, exp: RationalExp) -> std::result::Result<OperatorPoly, String> {
    if exp.is_integer() {
        let n = exp.num();
        if n >= 0 {
            return Ok(base.pow(n as u32));
        }
        // negative powers only of invertible monomials
        let (c, e) = as_monomial(&base)
            .ok_or_else(|| "negative powers are only defined for z-monomials".to_string())?;
        if c == Complex64::new(0.0, 0.0) {
            return Err("zero cannot be inverted".to_string());
        }
        return Ok(OperatorPoly::from_series(PuiseuxSeries::monomial(
            c.powi(n as i32),
            e.scale(n),
        )));
    }
    // rational powers only of unit z-monomials, to dodge branch choices
    match as_monomial(&base) {
        Some((c, e)) if c == Complex64::new(1.0, 0.0) => Ok(OperatorPoly::from_series(
            PuiseuxSeries::monomial(c, e.mul(&exp)),
        )),
        _ => Err("rational powers are only defined for z-monomials with unit coefficient".into()),
    }
}

pub(super) fn parse_operator(text: &str) -> Result<DiffOp> {
    let toks = lex(text)?;
    let lines = text.lines().count().max(1);
    let last_len = text.lines().last().map(|l| l.chars().count()).unwrap_or(0);
    let mut parser = Parser {
        toks,
        pos: 0,
        end: (lines, last_len + 1),
    };
    let poly = parser.expr()?;
    if parser.pos != parser.toks.len() {
        let (l, c) = parser.here();
        return Err(err(l, c, "trailing input after expression"));
    }
    match DiffOp::from_poly(poly, BasePoint::Origin) {
        Ok(op) => Ok(op),
        Err(e) => Err(e),
    }
}
