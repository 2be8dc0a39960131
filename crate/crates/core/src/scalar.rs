//! Scalar fields used for tensor entries.
//!
//! Exact work uses [`Q`] (arbitrary precision rationals); statistical work uses
//! `f64`. Both implement [`Scalar`], so tensor algebra is written once.

use std::fmt::{Debug, Display};
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational scalar.
pub type Q = BigRational;

pub trait Scalar:
    Clone
    + Debug
    + Display
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn from_i64(v: i64) -> Self;
    fn from_q(v: &Q) -> Self;
    fn parse_scalar(s: &str) -> Result<Self>;
    fn is_exact() -> bool;
    fn to_f64(&self) -> f64;
}

impl Scalar for Q {
    fn from_i64(v: i64) -> Self {
        Q::from_integer(BigInt::from(v))
    }

    fn from_q(v: &Q) -> Self {
        v.clone()
    }

    fn parse_scalar(s: &str) -> Result<Self> {
        parse_rational(s)
    }

    fn is_exact() -> bool {
        true
    }

    fn to_f64(&self) -> f64 {
        q_to_f64(self)
    }
}

impl Scalar for f64 {
    fn from_i64(v: i64) -> Self {
        v as f64
    }

    fn from_q(v: &Q) -> Self {
        q_to_f64(v)
    }

    fn parse_scalar(s: &str) -> Result<Self> {
        if let Some((n, d)) = s.split_once('/') {
            let n: f64 = n
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad number `{s}`")))?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad number `{s}`")))?;
            return Ok(n / d);
        }
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad number `{s}`")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(v)
    }

    fn is_exact() -> bool {
        false
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn q_to_f64(v: &Q) -> f64 {
    match (v.numer().to_f64(), v.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        // huge numerator or denominator: scale both down first
        _ => {
            let shift = v.numer().bits().max(v.denom().bits()).saturating_sub(1000);
            let n = (v.numer() >> shift).to_f64().unwrap_or(0.0);
            let d = (v.denom() >> shift).to_f64().unwrap_or(1.0);
            n / d
        }
    }
}

/// Parse `p/q`, an integer, or a finite decimal (`0.25`, `-1.5e-3`) exactly.
pub fn parse_rational(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Invalid(format!("bad rational `{s}`"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(Q::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = Q::from_integer(digits.parse::<BigInt>().map_err(|_| bad())?);
    let scale = exp - frac_part.len() as i32;
    let ten = Q::from_integer(BigInt::from(10));
    if scale >= 0 {
        value *= num_traits::pow(ten, scale as usize);
    } else {
        value /= num_traits::pow(ten, (-scale) as usize);
    }
    Ok(if neg { -value } else { value })
}
