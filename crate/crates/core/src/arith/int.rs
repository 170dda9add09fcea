use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use super::nat::Nat;
use crate::error::{invalid, Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

/// Signed integer of arbitrary size: a sign and a [`Nat`] magnitude.
///
/// Zero always carries [`Sign::Zero`] and an empty magnitude.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiWordInt {
    sign: Sign,
    mag: Nat,
}

impl MultiWordInt {
    pub fn zero() -> Self {
        MultiWordInt { sign: Sign::Zero, mag: Nat::zero() }
    }

    pub fn one() -> Self {
        MultiWordInt::from_nat(Nat::one())
    }

    pub fn from_nat(mag: Nat) -> Self {
        let sign = if mag.is_zero() { Sign::Zero } else { Sign::Positive };
        MultiWordInt { sign, mag }
    }

    pub fn from_parts(negative: bool, mag: Nat) -> Self {
        let mut v = MultiWordInt::from_nat(mag);
        if negative && v.sign == Sign::Positive {
            v.sign = Sign::Negative;
        }
        v
    }

    pub fn from_i128(v: i128) -> Self {
        MultiWordInt::from_parts(v < 0, Nat::from_u128(v.unsigned_abs()))
    }

    #[inline]
    pub fn sign(&self) -> Sign {
        self.sign
    }

    #[inline]
    pub fn magnitude(&self) -> &Nat {
        &self.mag
    }

    pub fn into_magnitude(self) -> Nat {
        self.mag
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.sign == Sign::Zero
    }

    #[inline]
    pub fn is_negative(&self) -> bool {
        self.sign == Sign::Negative
    }

    #[inline]
    pub fn is_positive(&self) -> bool {
        self.sign == Sign::Positive
    }

    pub fn abs(&self) -> MultiWordInt {
        MultiWordInt::from_nat(self.mag.clone())
    }

    pub fn pow(&self, k: u64) -> MultiWordInt {
        let negative = self.is_negative() && k % 2 == 1;
        MultiWordInt::from_parts(negative, self.mag.pow(k))
    }

    pub fn shl(&self, bits: u64) -> MultiWordInt {
        MultiWordInt::from_parts(self.is_negative(), self.mag.shl(bits))
    }

    /// Truncating division; remainder takes the sign of the dividend.
    pub fn divrem(&self, d: &MultiWordInt) -> crate::Result<(MultiWordInt, MultiWordInt)> {
        if d.is_zero() {
            return Err(invalid("integer division by zero"));
        }
        let (q, r) = self.mag.divrem(&d.mag);
        Ok((
            MultiWordInt::from_parts(self.is_negative() != d.is_negative(), q),
            MultiWordInt::from_parts(self.is_negative(), r),
        ))
    }

    pub fn to_i128(&self) -> Option<i128> {
        let m = self.mag.to_u128()?;
        if self.is_negative() {
            if m <= i128::MAX as u128 + 1 {
                Some((m as i128).wrapping_neg())
            } else {
                None
            }
        } else {
            i128::try_from(m).ok()
        }
    }

    /// Lowercase hex with a sign prefix, e.g. `-1f` or `+0`.
    pub fn to_hex(&self) -> String {
        let prefix = if self.is_negative() { '-' } else { '+' };
        format!("{}{}", prefix, self.mag.to_hex())
    }

    pub fn from_hex(s: &str) -> crate::Result<Self> {
        let (negative, digits) = split_sign(s);
        let mag = Nat::from_hex(digits).ok_or_else(|| invalid(format!("bad hex integer {s:?}")))?;
        Ok(MultiWordInt::from_parts(negative, mag))
    }

    pub fn to_f64(&self) -> f64 {
        let m = self.mag.to_f64();
        if self.is_negative() {
            -m
        } else {
            m
        }
    }
}

fn split_sign(s: &str) -> (bool, &str) {
    if let Some(rest) = s.strip_prefix('-') {
        (true, rest)
    } else if let Some(rest) = s.strip_prefix('+') {
        (false, rest)
    } else {
        (false, s)
    }
}

fn signed_add(an: bool, a: &Nat, bn: bool, b: &Nat) -> MultiWordInt {
    if an == bn {
        return MultiWordInt::from_parts(an, a.add(b));
    }
    match a.cmp(b) {
        Ordering::Equal => MultiWordInt::zero(),
        Ordering::Greater => MultiWordInt::from_parts(an, a.sub(b)),
        Ordering::Less => MultiWordInt::from_parts(bn, b.sub(a)),
    }
}

impl Add for &MultiWordInt {
    type Output = MultiWordInt;
    fn add(self, rhs: &MultiWordInt) -> MultiWordInt {
        signed_add(self.is_negative(), &self.mag, rhs.is_negative(), &rhs.mag)
    }
}

impl Sub for &MultiWordInt {
    type Output = MultiWordInt;
    fn sub(self, rhs: &MultiWordInt) -> MultiWordInt {
        signed_add(self.is_negative(), &self.mag, !rhs.is_negative(), &rhs.mag)
    }
}

impl Mul for &MultiWordInt {
    type Output = MultiWordInt;
    fn mul(self, rhs: &MultiWordInt) -> MultiWordInt {
        MultiWordInt::from_parts(self.is_negative() != rhs.is_negative(), self.mag.mul(&rhs.mag))
    }
}

impl Neg for &MultiWordInt {
    type Output = MultiWordInt;
    fn neg(self) -> MultiWordInt {
        MultiWordInt::from_parts(!self.is_negative(), self.mag.clone())
    }
}

impl Ord for MultiWordInt {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                Sign::Zero => Ordering::Equal,
                Sign::Positive => self.mag.cmp(&other.mag),
                Sign::Negative => other.mag.cmp(&self.mag),
            },
            o => o,
        }
    }
}

impl PartialOrd for MultiWordInt {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiWordInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_negative() {
            f.write_str("-")?;
        }
        f.write_str(&self.mag.to_decimal())
    }
}

impl fmt::Debug for MultiWordInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for MultiWordInt {
    type Err = Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        let (negative, digits) = split_sign(s.trim());
        let mag = Nat::from_decimal(digits).ok_or_else(|| invalid(format!("bad integer {s:?}")))?;
        Ok(MultiWordInt::from_parts(negative, mag))
    }
}

impl From<u64> for MultiWordInt {
    fn from(v: u64) -> Self {
        MultiWordInt::from_nat(Nat::from_u64(v))
    }
}

impl From<i64> for MultiWordInt {
    fn from(v: i64) -> Self {
        MultiWordInt::from_i128(v as i128)
    }
}

impl From<i32> for MultiWordInt {
    fn from(v: i32) -> Self {
        MultiWordInt::from_i128(v as i128)
    }
}

impl From<u128> for MultiWordInt {
    fn from(v: u128) -> Self {
        MultiWordInt::from_nat(Nat::from_u128(v))
    }
}

impl From<Nat> for MultiWordInt {
    fn from(v: Nat) -> Self {
        MultiWordInt::from_nat(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::{BigInt, Sign as BigSign};
    use proptest::prelude::*;

    fn int_strategy() -> impl Strategy<Value = MultiWordInt> {
        (any::<bool>(), prop::collection::vec(any::<u64>(), 0..5))
            .prop_map(|(neg, v)| MultiWordInt::from_parts(neg, Nat::from_slice(&v)))
    }

    fn big(v: &MultiWordInt) -> BigInt {
        let digits: Vec<u32> =
            v.magnitude().limbs().iter().flat_map(|w| [*w as u32, (*w >> 32) as u32]).collect();
        let sign = match v.sign() {
            Sign::Negative => BigSign::Minus,
            Sign::Zero => BigSign::NoSign,
            Sign::Positive => BigSign::Plus,
        };
        BigInt::from_slice(sign, &digits)
    }

    #[test]
    fn zero_is_canonical() {
        let z = MultiWordInt::from_parts(true, Nat::zero());
        assert_eq!(z.sign(), Sign::Zero);
        assert_eq!(z, MultiWordInt::zero());
        assert_eq!(z.to_hex(), "+0");
        let five = MultiWordInt::from(5u64);
        assert!((&five - &five).is_zero());
    }

    #[test]
    fn int_pow_examples() {
        assert_eq!(MultiWordInt::from(2u64).pow(10), MultiWordInt::from(1024u64));
        assert_eq!(MultiWordInt::from(3u64).pow(0), MultiWordInt::one());
        let mut acc = MultiWordInt::one();
        let ten = MultiWordInt::from(10u64);
        for _ in 0..30 {
            acc = &acc * &ten;
        }
        assert_eq!(ten.pow(30), acc);
        assert_eq!(ten.pow(30).to_string(), format!("1{}", "0".repeat(30)));
    }

    #[test]
    fn parse_and_print() {
        let v: MultiWordInt = "-340282366920938463463374607431768211457".parse().unwrap();
        assert_eq!(v.to_string(), "-340282366920938463463374607431768211457");
        assert_eq!(MultiWordInt::from_hex(&v.to_hex()).unwrap(), v);
        assert!("12x".parse::<MultiWordInt>().is_err());
    }

    proptest! {
        #[test]
        fn signed_ops_match_reference(a in int_strategy(), b in int_strategy()) {
            prop_assert_eq!(big(&(&a + &b)), big(&a) + big(&b));
            prop_assert_eq!(big(&(&a - &b)), big(&a) - big(&b));
            prop_assert_eq!(big(&(&a * &b)), big(&a) * big(&b));
            prop_assert_eq!(a.cmp(&b), big(&a).cmp(&big(&b)));
            if !b.is_zero() {
                let (q, r) = a.divrem(&b).unwrap();
                prop_assert_eq!(big(&q), big(&a) / big(&b));
                prop_assert_eq!(big(&r), big(&a) % big(&b));
            }
        }

        #[test]
        fn serialization_round_trips(a in int_strategy()) {
            prop_assert_eq!(MultiWordInt::from_hex(&a.to_hex()).unwrap(), a.clone());
            prop_assert_eq!(a.to_string().parse::<MultiWordInt>().unwrap(), a);
        }
    }
}
