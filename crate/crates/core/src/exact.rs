//! Exact rational scalars and the conversions the rest of the crate needs.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Arbitrary-precision rational in lowest terms with a positive denominator.
pub type ExactScalar = BigRational;

pub fn int(v: i64) -> ExactScalar {
    BigRational::from_integer(BigInt::from(v))
}

pub fn ratio(num: i64, den: i64) -> ExactScalar {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_big(v: BigInt) -> ExactScalar {
    BigRational::from_integer(v)
}

pub fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

/// Parses `"3/5"`, `"-7"`, `"0.6"` or `"1e-3"` into an exact rational.
///
/// Decimal strings are read digit by digit, so `"0.6"` is exactly 3/5.
pub fn parse(text: &str) -> Result<ExactScalar> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::Format("empty number".into()));
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad numerator in {s:?}")))?;
        let d: BigInt = d
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad denominator in {s:?}")))?;
        if d.is_zero() {
            return Err(Error::Format(format!("zero denominator in {s:?}")));
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let e: i32 = s[pos + 1..]
                .parse()
                .map_err(|_| Error::Format(format!("bad exponent in {s:?}")))?;
            (&s[..pos], e)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if whole.is_empty() && frac.is_empty()
        || !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(Error::Format(format!("not a number: {s:?}")));
    }
    let joined = format!("{whole}{frac}");
    let mut num: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined.parse().map_err(|_| Error::Format(format!("not a number: {s:?}")))?
    };
    if negative {
        num = -num;
    }
    let scale = exponent - frac.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        BigRational::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(num, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// `num/den` form, or a bare integer when the denominator is one.
pub fn to_fraction_string(v: &ExactScalar) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

/// Nearest `f64`, robust to numerators and denominators beyond `f64` range.
pub fn to_f64(v: &ExactScalar) -> f64 {
    if let Some(f) = v.to_f64() {
        if f.is_finite() && (f != 0.0 || v.is_zero()) {
            return f;
        }
    }
    // Scale both parts down to 64 significant bits and track the exponent.
    let sign = if v.is_negative() { -1.0 } else { 1.0 };
    let n = v.numer().abs();
    let d = v.denom().clone();
    let nb = n.bits() as i64;
    let db = d.bits() as i64;
    let ns = (nb - 64).max(0);
    let ds = (db - 64).max(0);
    let nf = (&n >> ns as usize).to_f64().unwrap_or(f64::MAX);
    let df = (&d >> ds as usize).to_f64().unwrap_or(f64::MAX);
    sign * (nf / df) * 2f64.powi((ns - ds) as i32)
}

/// Exact rational approximating a finite `f64` (its binary expansion).
pub fn from_f64(v: f64) -> Result<ExactScalar> {
    BigRational::from_float(v).ok_or_else(|| Error::Domain(format!("non-finite value {v}")))
}

pub fn floor_int(v: &ExactScalar) -> BigInt {
    v.numer().div_floor(v.denom())
}

/// Exact `x^(num/den) <= y^(num/den)`-style comparison helper: `base^e` for a
/// non-negative integer exponent.
pub fn pow(base: &ExactScalar, e: u32) -> ExactScalar {
    num_traits::pow(base.clone(), e as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse("0.6").unwrap(), ratio(3, 5));
        assert_eq!(parse("-1.25").unwrap(), ratio(-5, 4));
        assert_eq!(parse("2").unwrap(), int(2));
        assert_eq!(parse("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(parse(".5").unwrap(), ratio(1, 2));
        assert_eq!(parse("2/3").unwrap(), ratio(2, 3));
        assert_eq!(parse(" 4/6 ").unwrap(), ratio(2, 3));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("").is_err());
        assert!(parse("abc").is_err());
        assert!(parse("1/0").is_err());
        assert!(parse("1.2.3").is_err());
        assert!(parse(".").is_err());
    }

    #[test]
    fn fraction_strings() {
        assert_eq!(to_fraction_string(&ratio(6, 4)), "3/2");
        assert_eq!(to_fraction_string(&int(-7)), "-7");
    }

    #[test]
    fn f64_conversion_survives_huge_denominators() {
        let tiny = BigRational::new(BigInt::one(), pow2(2000));
        let f = to_f64(&tiny);
        assert_eq!(f, 0.0);
        let v = BigRational::new(pow2(1100) * 3, pow2(1100));
        assert_eq!(to_f64(&v), 3.0);
        let w = BigRational::new(pow2(1100), pow2(1099) * 3);
        assert!((to_f64(&w) - 2.0 / 3.0).abs() < 1e-15);
    }
}
