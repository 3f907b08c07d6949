//! Exact rational exponents.
//!
//! Exponent bookkeeping (ramification lattices, Newton slopes) must be exact,
//! so exponents are stored as reduced fractions with positive denominator
//! while coefficients stay in floating point.

use std::cmp::Ordering;
use std::fmt;

/// A rational number `num/den` in lowest terms, `den > 0`.
///
/// Used for exponents of `z` and for Newton-polygon slopes. Arithmetic is
/// exact; all operations reduce the result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RationalExp {
    num: i64,
    den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub(crate) fn lcm_u32(a: u32, b: u32) -> u32 {
    let g = gcd(a as i64, b as i64) as u32;
    a / g * b
}

impl RationalExp {
    pub const ZERO: RationalExp = RationalExp { num: 0, den: 1 };
    pub const ONE: RationalExp = RationalExp { num: 1, den: 1 };

    /// Builds `num/den` reduced to lowest terms. Panics if `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational exponent with zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let (num, den) = (num * sign, den * sign);
        let g = gcd(num, den).max(1);
        RationalExp {
            num: num / g,
            den: den / g,
        }
    }

    pub fn from_integer(n: i64) -> Self {
        RationalExp { num: n, den: 1 }
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_negative(&self) -> bool {
        self.num < 0
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn neg(&self) -> Self {
        RationalExp {
            num: -self.num,
            den: self.den,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        RationalExp::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        RationalExp::new(self.num * other.num, self.den * other.den)
    }

    /// Multiplies by an integer (exponent scaling under `z = w^k`).
    pub fn scale(&self, k: i64) -> Self {
        RationalExp::new(self.num * k, self.den)
    }

    /// Divides by a positive integer (inverse ramification).
    pub fn unscale(&self, q: i64) -> Self {
        RationalExp::new(self.num, self.den * q)
    }
}

impl PartialOrd for RationalExp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RationalExp {
    fn cmp(&self, other: &Self) -> Ordering {
        // denominators are positive, cross-multiplication preserves order
        let lhs = self.num as i128 * other.den as i128;
        let rhs = other.num as i128 * self.den as i128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for RationalExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}
