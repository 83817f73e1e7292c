//! Numeric backend shared by every computation in the crate.
//!
//! All payoff and probability arithmetic is generic over [`Scalar`], with two
//! concrete backends: `f64` for fast experimentation and
//! [`num_rational::BigRational`] for exact runs. Exact mode removes the
//! tie-breaking ambiguity that floating point introduces into argmax
//! selections, which the transfer computations depend on.

use std::cmp::Ordering;
use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumParseError {
    #[error("empty numeric literal")]
    Empty,
    #[error("invalid numeric literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("non-finite value `{0}`")]
    NonFinite(String),
}

/// Field operations plus the few extras the mechanism computations need.
///
/// Implementations must be total on the values the crate produces: divisions
/// are only performed with nonzero denominators and square roots only on
/// nonnegative values.
pub trait Scalar:
    Clone + PartialEq + PartialOrd + Debug + Display + Zero + One + Signed + Send + Sync + 'static
{
    /// True for backends whose comparisons are exact (no rounding error).
    const EXACT: bool;

    fn from_int(v: i64) -> Self;

    /// The exact value `num / den`.
    fn ratio(num: i64, den: u64) -> Self;

    /// Parses a decimal literal (`-1.25e-3`) or a fraction (`2/3`) exactly.
    fn parse_literal(s: &str) -> Result<Self, NumParseError>;

    /// Square root, exact to well below every tolerance used in this crate.
    ///
    /// The rational backend returns a deterministic dyadic approximation with
    /// at least 96 fractional bits; results are ordinary values afterwards, so
    /// identities built from them still hold exactly.
    fn sqrt_approx(&self) -> Self;

    fn approx_f64(&self) -> f64;

    /// Total order. Panics on NaN, which no supported computation produces.
    fn total_cmp(&self, other: &Self) -> Ordering;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_int(v: i64) -> Self {
        v as f64
    }

    fn ratio(num: i64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn parse_literal(s: &str) -> Result<Self, NumParseError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(NumParseError::Empty);
        }
        if let Some((num, den)) = s.split_once('/') {
            let n: f64 = num
                .trim()
                .parse()
                .map_err(|_| NumParseError::Invalid(s.to_string()))?;
            let d: f64 = den
                .trim()
                .parse()
                .map_err(|_| NumParseError::Invalid(s.to_string()))?;
            if d == 0.0 {
                return Err(NumParseError::ZeroDenominator(s.to_string()));
            }
            return Ok(n / d);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| NumParseError::Invalid(s.to_string()))?;
        if !v.is_finite() {
            return Err(NumParseError::NonFinite(s.to_string()));
        }
        Ok(v)
    }

    fn sqrt_approx(&self) -> Self {
        debug_assert!(*self >= 0.0, "sqrt of negative value");
        f64::sqrt(*self)
    }

    fn approx_f64(&self) -> f64 {
        *self
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).expect("NaN in scalar comparison")
    }
}

/// Fractional bits kept by the rational square-root approximation.
const SQRT_PRECISION_BITS: u64 = 96;

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_int(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }

    fn ratio(num: i64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn parse_literal(s: &str) -> Result<Self, NumParseError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(NumParseError::Empty);
        }
        if let Some((num, den)) = s.split_once('/') {
            let n = parse_decimal_rational(num.trim())?;
            let d = parse_decimal_rational(den.trim())?;
            if d.is_zero() {
                return Err(NumParseError::ZeroDenominator(s.to_string()));
            }
            return Ok(n / d);
        }
        parse_decimal_rational(s)
    }

    fn sqrt_approx(&self) -> Self {
        debug_assert!(!self.is_negative(), "sqrt of negative value");
        if self.is_zero() {
            return BigRational::zero();
        }
        // sqrt(n/d) = isqrt(n * d * 4^P) / (d * 2^P), floor-accurate to one
        // unit in the last (2^-P scaled) place.
        let numer = self.numer();
        let denom = self.denom();
        let scaled: BigInt = (numer * denom) << (2 * SQRT_PRECISION_BITS);
        let root = scaled.sqrt();
        BigRational::new(root, denom << SQRT_PRECISION_BITS)
    }

    fn approx_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // Fall back to a component-wise quotient for huge operands.
            let n = self.numer().to_f64().unwrap_or(f64::MAX);
            let d = self.denom().to_f64().unwrap_or(f64::MAX);
            n / d
        })
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        Ord::cmp(self, other)
    }
}

/// Parses `[-+]?digits[.digits][eE[-+]digits]` into an exact rational.
fn parse_decimal_rational(s: &str) -> Result<BigRational, NumParseError> {
    if s.is_empty() {
        return Err(NumParseError::Empty);
    }
    let original = s;
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i64 = s[pos + 1..]
                .parse()
                .map_err(|_| NumParseError::Invalid(original.to_string()))?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.as_bytes().first() {
        Some(b'-') => (-1i64, &mantissa[1..]),
        Some(b'+') => (1, &mantissa[1..]),
        _ => (1, mantissa),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(NumParseError::Invalid(original.to_string()));
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(NumParseError::Invalid(original.to_string()));
    }
    let mut value = BigInt::zero();
    for b in int_part.bytes().chain(frac_part.bytes()) {
        value = value * 10 + (b - b'0');
    }
    let scale = exponent - frac_part.len() as i64;
    let mut rational = BigRational::from_integer(value * sign);
    match scale.cmp(&0) {
        Ordering::Greater => {
            rational *= BigRational::from_integer(BigInt::from(10).pow(scale as u32))
        }
        Ordering::Less => {
            rational /= BigRational::from_integer(BigInt::from(10).pow((-scale) as u32))
        }
        Ordering::Equal => {}
    }
    Ok(rational)
}

/// 1-norm of the difference of two equal-length vectors.
pub fn l1_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + (x.clone() - y.clone()).abs();
    }
    acc
}

/// 2-norm of a vector (via [`Scalar::sqrt_approx`]).
pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    let mut acc = S::zero();
    for x in v {
        acc = acc + x.clone() * x.clone();
    }
    acc.sqrt_approx()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + x.clone() * y.clone();
    }
    acc
}

pub fn sum<S: Scalar>(v: &[S]) -> S {
    let mut acc = S::zero();
    for x in v {
        acc = acc + x.clone();
    }
    acc
}

pub fn max_scalar<S: Scalar>(a: S, b: S) -> S {
    if a.total_cmp(&b) == Ordering::Less {
        b
    } else {
        a
    }
}

/// `|a - b| <= tol` with `tol` given in absolute f64 units. Exact backends
/// compare against the same threshold so both modes accept the same inputs.
pub fn within_tol<S: Scalar>(a: &S, b: &S, tol: f64) -> bool {
    let diff = (a.clone() - b.clone()).abs();
    diff.approx_f64() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        let r = BigRational::parse_literal("0.8").unwrap();
        assert_eq!(r, BigRational::ratio(4, 5));
        let r = BigRational::parse_literal("-1.25e-2").unwrap();
        assert_eq!(r, BigRational::ratio(-1, 80));
        let r = BigRational::parse_literal("2/3").unwrap();
        assert_eq!(r, BigRational::ratio(2, 3));
        let r = BigRational::parse_literal("1e3").unwrap();
        assert_eq!(r, BigRational::from_int(1000));
    }

    #[test]
    fn rejects_bad_literals() {
        assert!(BigRational::parse_literal("").is_err());
        assert!(BigRational::parse_literal("1/0").is_err());
        assert!(BigRational::parse_literal("abc").is_err());
        assert!(f64::parse_literal("inf").is_err());
    }

    #[test]
    fn rational_sqrt_is_tight() {
        let two = BigRational::from_int(2);
        let root = two.sqrt_approx();
        let err = (root.clone() * root - two).abs();
        assert!(err < BigRational::ratio(1, 1 << 62) * BigRational::ratio(1, 1 << 30));
    }

    #[test]
    fn sqrt_of_perfect_square_is_exact_enough() {
        let q = BigRational::ratio(9, 4);
        let r = q.sqrt_approx();
        let err = (r - BigRational::ratio(3, 2)).abs();
        assert!(err.approx_f64() < 1e-28);
    }

    #[test]
    fn l1_and_l2_match_hand_values() {
        let a = [0.8f64, 0.2];
        let b = [0.4f64, 0.6];
        assert!((l1_distance(&a, &b) - 0.8).abs() < 1e-15);
        assert!((l2_norm(&a) - 0.68f64.sqrt()).abs() < 1e-15);
    }
}
