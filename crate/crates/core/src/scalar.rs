//! Probability scalars.
//!
//! Every exact computation in the crate is written against [`Probability`],
//! so the same code runs in `f64`/`f32` for quick sweeps and in [`Rational`]
//! when the answer has to be exact. Lottery masses are dyadic, so `Rational`
//! keeps power-of-two denominators on a shift-and-strip path and never runs a
//! big gcd for them.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed, ToPrimitive, Zero};

/// Scalar type usable as a probability mass.
pub trait Probability:
    Clone + fmt::Debug + PartialOrd + Num + Send + Sync + 'static
{
    /// `numer / denom`, exactly when the type allows it.
    fn from_ratio(numer: u64, denom: u64) -> Self;

    fn to_f64(&self) -> f64;

    /// Whether arithmetic in this type is exact.
    fn is_exact() -> bool;

    /// `1 - self`.
    fn complement(&self) -> Self {
        Self::one() - self.clone()
    }

    /// `self^exp` by repeated squaring.
    fn powu(&self, exp: u64) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one();
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }

    /// `2^-k`.
    fn half_pow(k: u32) -> Self {
        if k < 64 {
            Self::from_ratio(1, 1u64 << k)
        } else {
            Self::from_ratio(1, 2).powu(u64::from(k))
        }
    }
}

impl Probability for f64 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        numer as f64 / denom as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_exact() -> bool {
        false
    }
    fn powu(&self, exp: u64) -> Self {
        match i32::try_from(exp) {
            Ok(e) => self.powi(e),
            Err(_) => self.powf(exp as f64),
        }
    }
    fn half_pow(k: u32) -> Self {
        (-(k as f64)).exp2()
    }
}

impl Probability for f32 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        (numer as f64 / denom as f64) as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
    fn is_exact() -> bool {
        false
    }
    fn powu(&self, exp: u64) -> Self {
        match i32::try_from(exp) {
            Ok(e) => self.powi(e),
            Err(_) => self.powf(exp as f32),
        }
    }
    fn half_pow(k: u32) -> Self {
        (-(k as f32)).exp2()
    }
}

/// Exact rational number with big-integer numerator and denominator.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Rational(BigRational);

/// Exponent `e` when `d == 2^e` (d > 0).
fn pow2_exponent(d: &BigInt) -> Option<u64> {
    let tz = d.trailing_zeros().unwrap_or(0);
    (d.bits() == tz + 1).then_some(tz)
}

/// Builds `numer / 2^exp` in lowest terms by stripping shared factors of two.
fn dyadic(numer: BigInt, exp: u64) -> Rational {
    if numer.is_zero() {
        return Rational::zero();
    }
    let strip = numer.trailing_zeros().unwrap_or(0).min(exp);
    let numer = numer >> strip;
    let denom = BigInt::one() << (exp - strip);
    Rational(BigRational::new_raw(numer, denom))
}

impl Rational {
    pub fn new(numer: impl Into<BigInt>, denom: impl Into<BigInt>) -> Self {
        Rational(BigRational::new(numer.into(), denom.into()))
    }

    pub fn from_integer(v: impl Into<BigInt>) -> Self {
        Rational(BigRational::from_integer(v.into()))
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }

    pub fn into_inner(self) -> BigRational {
        self.0
    }

    fn dyadic_parts(&self) -> Option<u64> {
        pow2_exponent(self.0.denom())
    }
}

impl From<BigRational> for Rational {
    fn from(r: BigRational) -> Self {
        Rational(r)
    }
}

impl From<i64> for Rational {
    fn from(v: i64) -> Self {
        Rational::from_integer(v)
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = num_rational::ParseRatioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BigRational::from_str(s.trim()).map(Rational)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        if let (Some(ea), Some(eb)) = (self.dyadic_parts(), other.dyadic_parts()) {
            let e = ea.max(eb);
            let a = self.0.numer() << (e - ea);
            let b = other.0.numer() << (e - eb);
            return a.cmp(&b);
        }
        self.0.cmp(&other.0)
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        if let (Some(ea), Some(eb)) = (self.dyadic_parts(), rhs.dyadic_parts()) {
            let e = ea.max(eb);
            let numer = (self.0.numer() << (e - ea)) + (rhs.0.numer() << (e - eb));
            return dyadic(numer, e);
        }
        Rational(self.0 + rhs.0)
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        self + (-rhs)
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        if let (Some(ea), Some(eb)) = (self.dyadic_parts(), rhs.dyadic_parts()) {
            return dyadic(self.0.numer() * rhs.0.numer(), ea + eb);
        }
        Rational(self.0 * rhs.0)
    }
}

impl Div for Rational {
    type Output = Rational;
    fn div(self, rhs: Rational) -> Rational {
        Rational(self.0 / rhs.0)
    }
}

impl Rem for Rational {
    type Output = Rational;
    fn rem(self, rhs: Rational) -> Rational {
        Rational(self.0 % rhs.0)
    }
}

impl Zero for Rational {
    fn zero() -> Self {
        Rational(BigRational::zero())
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Rational {
    fn one() -> Self {
        Rational(BigRational::one())
    }
}

impl Num for Rational {
    type FromStrRadixErr = num_rational::ParseRatioError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        BigRational::from_str_radix(s, radix).map(Rational)
    }
}

impl Probability for Rational {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        Rational::new(numer, denom)
    }

    fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    fn is_exact() -> bool {
        true
    }

    fn complement(&self) -> Self {
        // gcd(d - n, d) = gcd(n, d) = 1, so no reduction is needed.
        let d = self.0.denom().clone();
        let n = &d - self.0.numer();
        Rational(BigRational::new_raw(n, d))
    }

    fn powu(&self, exp: u64) -> Self {
        let e = u32::try_from(exp).expect("exponent fits in u32");
        let numer = num_traits::Pow::pow(self.0.numer(), e);
        let denom = num_traits::Pow::pow(self.0.denom(), e);
        if denom.is_negative() {
            Rational(BigRational::new_raw(-numer, -denom))
        } else {
            Rational(BigRational::new_raw(numer, denom))
        }
    }

    fn half_pow(k: u32) -> Self {
        Rational(BigRational::new_raw(BigInt::one(), BigInt::one() << k))
    }
}
