//! Truncated Puiseux series with exact rational exponents.
//!
//! A value represents a finite sum `Σ c_e z^e` over exponents `e` on the
//! lattice `(1/d)ℤ`, optionally carrying a truncation order: exponents at or
//! above the truncation order are *unknown*, not zero. Coefficients are
//! complex doubles; exponents are exact rationals, so ramification and
//! Newton-slope bookkeeping never suffer rounding.
//!
//! Values are immutable; every operation returns a fresh series.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rational::{lcm_u32, RationalExp};

/// Relative tolerance below which a coefficient is considered cancellation dust.
pub const COEFF_TOL: f64 = 1e-12;

/// A truncated Puiseux (Laurent–Puiseux) series in `z^{1/d}`.
#[derive(Clone, Debug)]
pub struct PuiseuxSeries {
    /// Ramification index: every stored exponent has denominator dividing `ram`.
    ram: u32,
    /// Nonzero coefficients keyed by exponent.
    terms: BTreeMap<RationalExp, Complex64>,
    /// Exponents `>= trunc` are unknown. `None` means the series is exact.
    trunc: Option<RationalExp>,
}

impl PartialEq for PuiseuxSeries {
    /// Term-map equality. The declared lattice is bookkeeping and does not
    /// affect the value, so it is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms && self.trunc == other.trunc
    }
}

fn min_opt(a: Option<RationalExp>, b: Option<RationalExp>) -> Option<RationalExp> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

impl PuiseuxSeries {
    pub fn zero() -> Self {
        PuiseuxSeries {
            ram: 1,
            terms: BTreeMap::new(),
            trunc: None,
        }
    }

    pub fn one() -> Self {
        Self::constant(Complex64::new(1.0, 0.0))
    }

    pub fn constant(c: Complex64) -> Self {
        Self::monomial(c, RationalExp::ZERO)
    }

    /// The single term `c * z^e`.
    pub fn monomial(c: Complex64, e: RationalExp) -> Self {
        let mut terms = BTreeMap::new();
        if c != Complex64::new(0.0, 0.0) {
            terms.insert(e, c);
        }
        let mut s = PuiseuxSeries {
            ram: e.den() as u32,
            terms,
            trunc: None,
        };
        s.normalize();
        s
    }

    /// Builds a series from `(exponent, coefficient)` pairs, accumulating
    /// duplicates exactly.
    pub fn from_terms<I: IntoIterator<Item = (RationalExp, Complex64)>>(iter: I) -> Self {
        let mut terms: BTreeMap<RationalExp, Complex64> = BTreeMap::new();
        for (e, c) in iter {
            *terms.entry(e).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let mut s = PuiseuxSeries {
            ram: 1,
            terms,
            trunc: None,
        };
        s.recompute_lattice();
        s.normalize();
        s
    }

    /// Attaches a truncation order, discarding any stored term at or above it.
    pub fn with_truncation(mut self, trunc: RationalExp) -> Self {
        self.trunc = Some(min_opt(self.trunc, Some(trunc)).unwrap());
        self.normalize();
        self
    }

    pub fn truncation(&self) -> Option<RationalExp> {
        self.trunc
    }

    pub fn ram(&self) -> u32 {
        self.ram
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Exact value zero with no truncation: nothing unknown, nothing stored.
    pub fn is_exactly_zero(&self) -> bool {
        self.terms.is_empty() && self.trunc.is_none()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&RationalExp, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, e: &RationalExp) -> Complex64 {
        self.terms.get(e).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Least stored exponent; `None` for a series with no stored terms.
    pub fn valuation(&self) -> Option<RationalExp> {
        self.terms.keys().next().copied()
    }

    /// Leading `(exponent, coefficient)` pair, if any.
    pub fn leading(&self) -> Option<(RationalExp, Complex64)> {
        self.terms.iter().next().map(|(e, c)| (*e, *c))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn recompute_lattice(&mut self) {
        let mut d = 1u32;
        for e in self.terms.keys() {
            d = lcm_u32(d, e.den() as u32);
        }
        if let Some(t) = self.trunc {
            d = lcm_u32(d, t.den() as u32);
        }
        self.ram = d;
    }

    /// Drops dust coefficients and terms past the truncation order, and keeps
    /// the zero series on the canonical `d = 1` lattice.
    fn normalize(&mut self) {
        if let Some(t) = self.trunc {
            self.terms = std::mem::take(&mut self.terms)
                .into_iter()
                .filter(|(e, _)| *e < t)
                .collect();
        }
        let floor = self.max_abs_coeff().max(1.0) * COEFF_TOL;
        self.terms.retain(|_, c| c.norm() >= floor);
        if self.terms.is_empty() && self.trunc.is_none() {
            self.ram = 1;
        } else {
            self.recompute_lattice();
        }
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -*c;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (e, c) in &other.terms {
            *terms.entry(*e).or_insert(Complex64::new(0.0, 0.0)) += *c;
        }
        let mut out = PuiseuxSeries {
            ram: lcm_u32(self.ram, other.ram),
            terms,
            trunc: min_opt(self.trunc, other.trunc),
        };
        out.normalize();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        if c == Complex64::new(0.0, 0.0) {
            let mut out = PuiseuxSeries::zero();
            out.trunc = self.trunc;
            out.normalize();
            return out;
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.normalize();
        out
    }

    /// Cauchy product. The result is known up to
    /// `min(val(a) + trunc(b), val(b) + trunc(a))`.
    pub fn mul(&self, other: &Self) -> Self {
        let trunc_from = |x: &Self, y: &Self| -> Option<RationalExp> {
            match (x.valuation(), y.trunc) {
                (Some(v), Some(t)) => Some(v.add(&t)),
                // no stored terms: x is O(z^trunc(x)) itself
                (None, Some(t)) => x.trunc.map(|tx| tx.add(&t)).or(Some(t)),
                _ => None,
            }
        };
        let trunc = min_opt(trunc_from(self, other), trunc_from(other, self));
        let mut terms: BTreeMap<RationalExp, Complex64> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea.add(eb);
                if let Some(t) = trunc {
                    if e >= t {
                        continue;
                    }
                }
                *terms.entry(e).or_insert(Complex64::new(0.0, 0.0)) += ca * cb;
            }
        }
        let mut out = PuiseuxSeries {
            ram: lcm_u32(self.ram, other.ram),
            terms,
            trunc,
        };
        out.normalize();
        out
    }

    /// `d/dz`: each term `c z^e` maps to `c e z^{e-1}`.
    pub fn derivative(&self) -> Self {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            if e.is_zero() {
                continue;
            }
            terms.insert(e.sub(&RationalExp::ONE), c * e.as_f64());
        }
        let mut out = PuiseuxSeries {
            ram: self.ram,
            terms,
            trunc: self.trunc.map(|t| t.sub(&RationalExp::ONE)),
        };
        out.normalize();
        out
    }

    /// The Euler derivative `z d/dz`: each term `c z^e` maps to `c e z^e`.
    pub fn delta_derivative(&self) -> Self {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            if e.is_zero() {
                continue;
            }
            terms.insert(*e, c * e.as_f64());
        }
        let mut out = PuiseuxSeries {
            ram: self.ram,
            terms,
            trunc: self.trunc,
        };
        out.normalize();
        out
    }

    /// Evaluates the stored (known) part at `point`, on the branch of
    /// `log z` equal to the principal value plus `2πi * branch`.
    pub fn eval(&self, point: Complex64, branch: i64) -> Result<Complex64> {
        if point == Complex64::new(0.0, 0.0) {
            return Err(Error::EvalAtZero);
        }
        let log = point.ln() + Complex64::new(0.0, 2.0 * std::f64::consts::PI * branch as f64);
        Ok(self.eval_log(log))
    }

    /// Evaluates at `z = r e^{iθ}` with the determination of `log z` fixed by
    /// the unprojected angle `θ` of the universal cover.
    pub fn eval_polar(&self, r: f64, theta: f64) -> Complex64 {
        self.eval_log(Complex64::new(r.ln(), theta))
    }

    fn eval_log(&self, log: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (e, c) in &self.terms {
            if e.is_zero() {
                acc += c;
            } else {
                acc += c * (log * e.as_f64()).exp();
            }
        }
        acc
    }

    /// Substitution `z = w^k`: exponents multiply by `k`, the lattice coarsens
    /// to `d / gcd(d, k)`.
    pub fn ramify(&self, k: u32) -> Self {
        assert!(k >= 1, "ramification index must be positive");
        self.scale_exponents(RationalExp::from_integer(k as i64))
    }

    /// Multiplies every exponent by the rational `r` (`ramify` is `r = k`,
    /// the inverse substitution is `r = 1/q`).
    pub fn scale_exponents(&self, r: RationalExp) -> Self {
        assert!(!r.is_zero() && !r.is_negative(), "exponent scaling must be positive");
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| (e.mul(&r), *c))
            .collect::<BTreeMap<_, _>>();
        let mut out = PuiseuxSeries {
            ram: 1,
            terms,
            trunc: self.trunc.map(|t| t.mul(&r)),
        };
        out.recompute_lattice();
        out.normalize();
        out
    }

    /// Writes the series in the grammar accepted by the operator parser.
    pub fn to_grammar_string(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (e, c)) in self.terms.iter().enumerate() {
            let (sign, c) = if c.im == 0.0 && c.re < 0.0 {
                ("-", -c)
            } else {
                ("+", *c)
            };
            if i == 0 {
                if sign == "-" {
                    out.push_str("- ");
                }
            } else {
                out.push_str(if sign == "-" { " - " } else { " + " });
            }
            let coeff = if c.im == 0.0 {
                format!("{}", c.re)
            } else if c.im < 0.0 {
                format!("({}-{}i)", c.re, -c.im)
            } else {
                format!("({}+{}i)", c.re, c.im)
            };
            let need_coeff = c != Complex64::new(1.0, 0.0) || e.is_zero();
            if need_coeff {
                out.push_str(&coeff);
            }
            if !e.is_zero() {
                if need_coeff {
                    out.push('*');
                }
                if *e == RationalExp::ONE {
                    out.push('z');
                } else if e.is_integer() {
                    out.push_str(&format!("z^{}", e.num()));
                } else {
                    out.push_str(&format!("z^({}/{})", e.num(), e.den()));
                }
            }
        }
        out
    }
}

impl fmt::Display for PuiseuxSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_grammar_string())?;
        if let Some(t) = self.trunc {
            write!(f, " + O(z^{})", t)?;
        }
        Ok(())
    }
}

/// The polynomial part of an exponent of growth: `f ∈ z^{-1/d} ℂ[z^{-1/d}]`.
///
/// All exponents are strictly negative and the series is exact (no
/// truncation). The zero factor is the empty sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialFactor {
    body: PuiseuxSeries,
}

impl ExponentialFactor {
    pub fn zero() -> Self {
        ExponentialFactor {
            body: PuiseuxSeries::zero(),
        }
    }

    /// Validates the negativity and exactness invariants.
    pub fn new(body: PuiseuxSeries) -> Result<Self> {
        if body.truncation().is_some() {
            return Err(Error::Unsupported(
                "an exponential factor must be an exact finite sum".into(),
            ));
        }
        if body.terms().any(|(e, _)| !e.is_negative()) {
            return Err(Error::Unsupported(
                "an exponential factor admits only strictly negative exponents".into(),
            ));
        }
        Ok(ExponentialFactor { body })
    }

    pub fn body(&self) -> &PuiseuxSeries {
        &self.body
    }

    pub fn is_zero(&self) -> bool {
        self.body.is_zero()
    }

    /// Ramification forced by this factor alone: lcm of exponent denominators.
    pub fn ramification(&self) -> u32 {
        self.body.ram()
    }

    pub fn add(&self, other: &Self) -> Self {
        ExponentialFactor {
            body: self.body.add(&other.body),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        ExponentialFactor {
            body: self.body.sub(&other.body),
        }
    }

    pub fn neg(&self) -> Self {
        ExponentialFactor {
            body: self.body.neg(),
        }
    }

    /// Image under the deck transformation `z^{1/d} ↦ e^{2πi/d} z^{1/d}`:
    /// the term `c z^{e}` picks up the phase `e^{2πi e}`.
    pub fn deck_image(&self) -> Self {
        let terms = self
            .body
            .terms()
            .map(|(e, c)| {
                let phase = 2.0 * std::f64::consts::PI * e.as_f64();
                (*e, c * Complex64::new(phase.cos(), phase.sin()))
            })
            .collect::<Vec<_>>();
        ExponentialFactor {
            body: PuiseuxSeries::from_terms(terms),
        }
    }

    /// `Re f(z)` at `z = r e^{iθ}` on the universal cover.
    pub fn re_at(&self, r: f64, theta: f64) -> f64 {
        self.body.eval_polar(r, theta).re
    }
}

impl fmt::Display for ExponentialFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.body.to_grammar_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn r(n: i64, d: i64) -> RationalExp {
        RationalExp::new(n, d)
    }

    #[test]
    fn exact_cancellation() {
        let a = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 2));
        let b = a.neg();
        let sum = a.add(&b);
        assert!(sum.is_exactly_zero());
        assert_eq!(sum.ram(), 1);

        // the two Airy factor bodies are mutual negatives
        let f1 = PuiseuxSeries::monomial(c(2.0 / 3.0, 0.0), r(3, 2));
        let f2 = PuiseuxSeries::monomial(c(-2.0 / 3.0, 0.0), r(3, 2));
        assert!(f1.add(&f2).is_zero());
    }

    #[test]
    fn addition_merges_lattices() {
        let a = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 2));
        let b = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 3));
        let sum = a.add(&b);
        assert_eq!(sum.ram(), 6);
        assert_eq!(sum.num_terms(), 2);
    }

    #[test]
    fn product_of_half_powers() {
        let h = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 2));
        let prod = h.mul(&h);
        assert_eq!(prod, PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 1)));
        assert_eq!(prod.ram(), 1);
    }

    #[test]
    fn one_is_a_unit() {
        let s = PuiseuxSeries::from_terms(vec![
            (r(-1, 2), c(2.0, -1.0)),
            (r(0, 1), c(0.5, 0.0)),
            (r(5, 3), c(-3.0, 3.0)),
        ]);
        assert_eq!(PuiseuxSeries::one().mul(&s), s);
        assert_eq!(s.mul(&PuiseuxSeries::one()), s);
    }

    /// Schoolbook convolution oracle for polynomial products.
    fn poly_mul_oracle(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![c(0.0, 0.0); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn product_matches_convolution_oracle() {
        // a handful of fixed pseudo-random integer polynomials, degree <= 4
        let polys: Vec<Vec<Complex64>> = vec![
            vec![c(1.0, 0.0), c(-2.0, 1.0), c(0.0, 3.0)],
            vec![c(4.0, 0.0), c(0.0, 0.0), c(2.0, -2.0), c(1.0, 0.0)],
            vec![c(-1.0, -1.0), c(5.0, 0.0)],
            vec![c(3.0, 2.0), c(1.0, 1.0), c(0.0, -4.0), c(2.0, 0.0), c(-3.0, 1.0)],
        ];
        for a in &polys {
            for b in &polys {
                let sa = PuiseuxSeries::from_terms(
                    a.iter().enumerate().map(|(i, x)| (r(i as i64, 1), *x)),
                );
                let sb = PuiseuxSeries::from_terms(
                    b.iter().enumerate().map(|(i, x)| (r(i as i64, 1), *x)),
                );
                let prod = sa.mul(&sb);
                for (k, want) in poly_mul_oracle(a, b).iter().enumerate() {
                    let got = prod.coeff(&r(k as i64, 1));
                    assert!((got - want).norm() < 1e-12, "coeff {k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn valuation_examples() {
        let s = PuiseuxSeries::from_terms(vec![(r(3, 2), c(1.0, 0.0)), (r(2, 1), c(1.0, 0.0))]);
        assert_eq!(s.valuation(), Some(r(3, 2)));
        assert_eq!(PuiseuxSeries::zero().valuation(), None);
        // Airy factor at the puncture coordinate
        let f = PuiseuxSeries::monomial(c(-2.0 / 3.0, 0.0), r(-3, 2));
        assert_eq!(f.valuation(), Some(r(-3, 2)));
    }

    #[test]
    fn eval_constants_and_branches() {
        let five = PuiseuxSeries::constant(c(5.0, 0.0));
        assert_eq!(five.eval(c(2.0, 3.0), 0).unwrap(), c(5.0, 0.0));

        // z^{1/2} at 1 on branch 1 is e^{iπ} = -1
        let h = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 2));
        let v = h.eval(c(1.0, 0.0), 1).unwrap();
        assert!((v - c(-1.0, 0.0)).norm() < 1e-12);

        assert!(h.eval(c(0.0, 0.0), 0).is_err());
    }

    #[test]
    fn airy_real_part_profile() {
        // Re((2/3) z^{3/2}) on |z| = R is (2/3) R^{3/2} cos(3θ/2)
        let f = PuiseuxSeries::monomial(c(2.0 / 3.0, 0.0), r(3, 2));
        let big_r = 7.3f64;
        for k in 0..20 {
            let theta = 0.37 * k as f64;
            let want = 2.0 / 3.0 * big_r.powf(1.5) * (1.5 * theta).cos();
            let got = f.eval_polar(big_r, theta).re;
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn ramify_examples() {
        let s = PuiseuxSeries::monomial(c(1.0, 0.0), r(3, 2));
        let w = s.ramify(2);
        assert_eq!(w, PuiseuxSeries::monomial(c(1.0, 0.0), r(3, 1)));
        assert_eq!(w.ram(), 1);
        assert_eq!(s.ramify(1), s);
    }

    #[test]
    fn truncation_semantics() {
        let a = PuiseuxSeries::from_terms(vec![(r(0, 1), c(1.0, 0.0)), (r(1, 1), c(1.0, 0.0))])
            .with_truncation(r(2, 1));
        let b = PuiseuxSeries::from_terms(vec![(r(1, 1), c(2.0, 0.0))]).with_truncation(r(3, 1));
        let sum = a.add(&b);
        assert_eq!(sum.truncation(), Some(r(2, 1)));

        // val(a) = 0, trunc(b) = 3, val(b) = 1, trunc(a) = 2 -> product known below 3
        let prod = a.mul(&b);
        assert_eq!(prod.truncation(), Some(r(3, 1)));
        assert_eq!(prod.coeff(&r(1, 1)), c(2.0, 0.0));
        assert_eq!(prod.coeff(&r(2, 1)), c(2.0, 0.0));

        // an empty-but-truncated series keeps its O() information
        let o2 = PuiseuxSeries::zero().with_truncation(r(2, 1));
        assert!(o2.is_zero() && !o2.is_exactly_zero());
        let shifted = o2.mul(&PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 1)));
        assert_eq!(shifted.truncation(), Some(r(3, 1)));
    }

    #[test]
    fn derivative_rules() {
        let s = PuiseuxSeries::from_terms(vec![(r(1, 2), c(4.0, 0.0)), (r(0, 1), c(7.0, 0.0))]);
        let ds = s.derivative();
        assert_eq!(ds, PuiseuxSeries::monomial(c(2.0, 0.0), r(-1, 2)));
        let es = s.delta_derivative();
        assert_eq!(es, PuiseuxSeries::monomial(c(2.0, 0.0), r(1, 2)));
    }

    #[test]
    fn factor_invariants() {
        let ok = PuiseuxSeries::monomial(c(1.0, 0.0), r(-3, 2));
        assert!(ExponentialFactor::new(ok).is_ok());
        let bad = PuiseuxSeries::monomial(c(1.0, 0.0), r(1, 2));
        assert!(ExponentialFactor::new(bad).is_err());
        assert!(ExponentialFactor::zero().is_zero());
    }

    #[test]
    fn deck_image_swaps_airy_pair() {
        let f1 = ExponentialFactor::new(PuiseuxSeries::monomial(c(2.0 / 3.0, 0.0), r(-3, 2)))
            .unwrap();
        let f2 = f1.neg();
        let img = f1.deck_image();
        let diff = img.body().sub(f2.body());
        assert!(diff.max_abs_coeff() < 1e-12);
    }

    #[test]
    fn grammar_strings() {
        let s = PuiseuxSeries::from_terms(vec![
            (r(-1, 1), c(1.0, 0.0)),
            (r(0, 1), c(-0.5, 0.0)),
            (r(3, 2), c(2.0, 1.0)),
        ]);
        assert_eq!(s.to_grammar_string(), "z^-1 - 0.5 + (2+1i)*z^(3/2)");
    }
}
