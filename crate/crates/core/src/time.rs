//! Exact rational time and quantities.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Sub};
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A rational number of abstract cost units.
///
/// Serialized as an integer when the denominator is 1 and as a `"num/den"`
/// string otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Time(pub Rational64);

/// Dimensionless exact ratio (bubble ratios, byte fractions).
pub type Ratio = Rational64;

impl Time {
    pub const ZERO: Time = Time(Rational64::new_raw(0, 1));

    pub fn new(num: i64, den: i64) -> Self {
        Time(Rational64::new(num, den))
    }

    pub fn int(v: i64) -> Self {
        Time(Rational64::from_integer(v))
    }

    pub fn ratio(self) -> Rational64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(self) -> bool {
        self.0 > Rational64::zero()
    }
}

impl From<i64> for Time {
    fn from(v: i64) -> Self {
        Time::int(v)
    }
}

impl From<Rational64> for Time {
    fn from(v: Rational64) -> Self {
        Time(v)
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, rhs: Time) -> Time {
        Time(self.0 + rhs.0)
    }
}

impl AddAssign for Time {
    fn add_assign(&mut self, rhs: Time) {
        self.0 += rhs.0;
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, rhs: Time) -> Time {
        Time(self.0 - rhs.0)
    }
}

impl Mul<i64> for Time {
    type Output = Time;
    fn mul(self, rhs: i64) -> Time {
        Time(self.0 * rhs)
    }
}

impl Mul<Rational64> for Time {
    type Output = Time;
    fn mul(self, rhs: Rational64) -> Time {
        Time(self.0 * rhs)
    }
}

impl Div<i64> for Time {
    type Output = Time;
    fn div(self, rhs: i64) -> Time {
        Time(self.0 / rhs)
    }
}

impl Div for Time {
    type Output = Rational64;
    fn div(self, rhs: Time) -> Rational64 {
        self.0 / rhs.0
    }
}

impl Sum for Time {
    fn sum<I: Iterator<Item = Time>>(iter: I) -> Time {
        iter.fold(Time::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ratio(&self.0, f)
    }
}

fn fmt_ratio(r: &Rational64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if *r.denom() == 1 {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

/// Formats a ratio as `n` or `n/d`.
pub fn ratio_string(r: &Rational64) -> String {
    struct D<'a>(&'a Rational64);
    impl fmt::Display for D<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            fmt_ratio(self.0, f)
        }
    }
    D(r).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational `{0}`")]
pub struct ParseRationalError(pub String);

/// Parses `"n"`, `"n/d"` or a finite decimal such as `"0.25"`.
pub fn parse_ratio(s: &str) -> Result<Rational64, ParseRationalError> {
    let err = || ParseRationalError(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| err())?;
        let d: i64 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Rational64::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 15 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let neg = int.starts_with('-');
        let int_part: i64 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let den = 10i64.pow(frac.len() as u32);
        let f: i64 = frac.parse().map_err(|_| err())?;
        let mag = int_part.abs().checked_mul(den).and_then(|v| v.checked_add(f)).ok_or_else(err)?;
        return Ok(Rational64::new(if neg { -mag } else { mag }, den));
    }
    s.parse::<i64>().map(Rational64::from_integer).map_err(|_| err())
}

impl FromStr for Time {
    type Err = ParseRationalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ratio(s).map(Time)
    }
}

impl Serialize for Time {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ratio_serde::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Time {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        ratio_serde::deserialize(d).map(Time)
    }
}

/// Serde adapter for `Rational64` fields: integer or `"num/den"` string.
pub mod ratio_serde {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        if *r.denom() == 1 {
            s.serialize_i64(*r.numer())
        } else {
            s.serialize_str(&ratio_string(r))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Rational64::from_integer(v)),
            Repr::Str(s) => parse_ratio(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!("3".parse::<Time>().unwrap(), Time::int(3));
        assert_eq!("6/4".parse::<Time>().unwrap(), Time::new(3, 2));
        assert_eq!("0.25".parse::<Time>().unwrap(), Time::new(1, 4));
        assert_eq!("-1.5".parse::<Time>().unwrap(), Time::new(-3, 2));
        assert!("1/0".parse::<Time>().is_err());
        assert!("abc".parse::<Time>().is_err());
        assert!("1.".parse::<Time>().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let v = vec![Time::int(2), Time::new(1, 3)];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[2,"1/3"]"#);
        let back: Vec<Time> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn display() {
        assert_eq!(Time::new(4, 2).to_string(), "2");
        assert_eq!(Time::new(3, 19).to_string(), "3/19");
    }
}
