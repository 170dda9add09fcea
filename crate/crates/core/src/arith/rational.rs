use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use super::int::MultiWordInt;
use super::nat::Nat;
use crate::error::{invalid, Error};

/// Exact rational number with a strictly positive denominator.
///
/// Values are not reduced automatically; equality and ordering compare by
/// cross-multiplication.
#[derive(Clone)]
pub struct Rational {
    num: MultiWordInt,
    den: MultiWordInt,
}

impl Rational {
    pub fn new(num: MultiWordInt, den: MultiWordInt) -> crate::Result<Self> {
        if den.is_zero() {
            return Err(invalid("rational with zero denominator"));
        }
        if den.is_negative() {
            return Ok(Rational { num: -&num, den: -&den });
        }
        Ok(Rational { num, den })
    }

    /// `num / den`; errors on a zero denominator.
    pub fn ratio(num: impl Into<MultiWordInt>, den: impl Into<MultiWordInt>) -> crate::Result<Self> {
        Rational::new(num.into(), den.into())
    }

    pub fn from_int(v: impl Into<MultiWordInt>) -> Self {
        Rational { num: v.into(), den: MultiWordInt::one() }
    }

    pub fn from_nats(num: Nat, den: Nat) -> crate::Result<Self> {
        Rational::new(num.into(), den.into())
    }

    /// `m / 2^shift`.
    pub fn dyadic(m: MultiWordInt, shift: u64) -> Self {
        Rational { num: m, den: MultiWordInt::from_nat(Nat::pow2(shift)) }
    }

    pub fn zero() -> Self {
        Rational::from_int(MultiWordInt::zero())
    }

    pub fn one() -> Self {
        Rational::from_int(MultiWordInt::one())
    }

    #[inline]
    pub fn numer(&self) -> &MultiWordInt {
        &self.num
    }

    #[inline]
    pub fn denom(&self) -> &MultiWordInt {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.num.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.num.is_positive()
    }

    pub fn add(&self, o: &Rational) -> Rational {
        if self.den == o.den {
            return Rational { num: &self.num + &o.num, den: self.den.clone() };
        }
        Rational { num: &(&self.num * &o.den) + &(&o.num * &self.den), den: &self.den * &o.den }
    }

    pub fn sub(&self, o: &Rational) -> Rational {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Rational) -> Rational {
        Rational { num: &self.num * &o.num, den: &self.den * &o.den }
    }

    pub fn div(&self, o: &Rational) -> crate::Result<Rational> {
        if o.is_zero() {
            return Err(invalid("rational division by zero"));
        }
        Rational::new(&self.num * &o.den, &self.den * &o.num)
    }

    pub fn neg(&self) -> Rational {
        Rational { num: -&self.num, den: self.den.clone() }
    }

    pub fn recip(&self) -> crate::Result<Rational> {
        Rational::one().div(self)
    }

    pub fn pow(&self, k: u64) -> Rational {
        Rational { num: self.num.pow(k), den: self.den.pow(k) }
    }

    pub fn reduced(&self) -> Rational {
        let g = self.num.magnitude().gcd(self.den.magnitude());
        if g.is_zero() || g.is_one() {
            return self.clone();
        }
        let num = self.num.magnitude().divrem(&g).0;
        let den = self.den.magnitude().divrem(&g).0;
        Rational { num: MultiWordInt::from_parts(self.is_negative(), num), den: den.into() }
    }

    /// Largest integer not exceeding the value.
    pub fn floor(&self) -> MultiWordInt {
        let (q, r) = self.num.divrem(&self.den).expect("denominator is positive");
        if r.is_negative() {
            &q - &MultiWordInt::one()
        } else {
            q
        }
    }

    pub fn in_unit_interval(&self) -> bool {
        !self.is_negative() && self.num <= self.den
    }

    /// Compares `num * 2^-exp`-style scaled values: is `2^e <= self`?
    fn pow2_le(&self, e: i64) -> bool {
        let a = self.num.magnitude();
        let b = self.den.magnitude();
        if e >= 0 {
            b.shl(e as u64) <= *a
        } else {
            *b <= a.shl(e.unsigned_abs())
        }
    }

    /// `floor(log2(self))` from the top-bit positions of numerator and
    /// denominator plus one exact comparison.
    pub fn floor_log2(&self) -> crate::Result<i64> {
        if !self.is_positive() {
            return Err(invalid("log2 of a non-positive rational"));
        }
        let c = self.num.magnitude().bit_len() as i64 - self.den.magnitude().bit_len() as i64;
        Ok(if self.pow2_le(c) { c } else { c - 1 })
    }

    pub fn ceil_log2(&self) -> crate::Result<i64> {
        let f = self.floor_log2()?;
        let exact = {
            let a = self.num.magnitude();
            let b = self.den.magnitude();
            if f >= 0 {
                b.shl(f as u64) == *a
            } else {
                *b == a.shl(f.unsigned_abs())
            }
        };
        Ok(if exact { f } else { f + 1 })
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let a = self.num.magnitude();
        let b = self.den.magnitude();
        // Scale so the integer quotient carries 64 significant bits.
        let shift = 64 + b.bit_len() as i64 - a.bit_len() as i64;
        let q = if shift >= 0 { a.shl(shift as u64).divrem(b).0 } else { a.divrem(&b.shl((-shift) as u64)).0 };
        let v = q.to_f64() * 2f64.powi(-shift.clamp(-2000, 2000) as i32);
        if self.is_negative() {
            -v
        } else {
            v
        }
    }
}

impl PartialEq for Rational {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Rational {}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.den == other.den {
            return self.num.cmp(&other.num);
        }
        (&self.num * &other.den).cmp(&(&other.num * &self.den))
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == MultiWordInt::one() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Parses `p/q` or a plain integer.
impl FromStr for Rational {
    type Err = Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        let s = s.trim();
        match s.split_once('/') {
            Some((p, q)) => Rational::new(p.parse()?, q.parse()?),
            None => Ok(Rational::from_int(s.parse::<MultiWordInt>()?)),
        }
    }
}

impl From<u64> for Rational {
    fn from(v: u64) -> Self {
        Rational::from_int(v)
    }
}

/// A value of the form `mantissa / 2^frac_bits` that approximates some
/// target probability to within `2^-precision`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DyadicApprox {
    pub mantissa: MultiWordInt,
    pub frac_bits: u64,
    pub precision: u32,
}

impl DyadicApprox {
    pub fn value(&self) -> Rational {
        Rational::dyadic(self.mantissa.clone(), self.frac_bits)
    }

    /// Exact value `v` that is already dyadic with at most `precision` + 1 bits.
    pub fn exact(mantissa: MultiWordInt, frac_bits: u64, precision: u32) -> Self {
        DyadicApprox { mantissa, frac_bits, precision }
    }
}

/// Rounds `x` to the nearest multiple of `2^-i` (ties upward). The error is at
/// most `2^-(i+1)`, within the `2^-i` an `i`-bit approximation allows.
pub fn dyadic_round(x: &Rational, i: u32) -> DyadicApprox {
    // floor((2 * num * 2^i + den) / (2 * den))
    let num = x.numer().shl(i as u64 + 1);
    let twice_den = x.denom().shl(1);
    let shifted = Rational::new(&num + x.denom(), twice_den).expect("positive denominator");
    DyadicApprox { mantissa: shifted.floor(), frac_bits: i as u64, precision: i }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(a: i64, b: i64) -> Rational {
        Rational::ratio(a, b).unwrap()
    }

    fn rat_strategy(max_words: usize) -> impl Strategy<Value = Rational> {
        (
            any::<bool>(),
            prop::collection::vec(any::<u64>(), 0..=max_words),
            prop::collection::vec(any::<u64>(), 1..=max_words),
        )
            .prop_filter_map("zero denominator", |(neg, n, d)| {
                let den = Nat::from_slice(&d);
                (!den.is_zero())
                    .then(|| Rational::new(MultiWordInt::from_parts(neg, Nat::from_slice(&n)), den.into()).unwrap())
            })
    }

    #[test]
    fn basic_examples() {
        assert_eq!(r(1, 2).add(&r(1, 3)), r(5, 6));
        assert_eq!(r(2, 4), r(1, 2));
        assert_eq!(r(2, 4).cmp(&r(1, 2)), Ordering::Equal);
        assert_eq!(r(3, -6), r(-1, 2));
        assert!(Rational::ratio(1, 0).is_err());
        assert!(r(1, 2).div(&Rational::zero()).is_err());
        assert_eq!(r(-7, 2).floor(), MultiWordInt::from(-4i64));
        assert_eq!(r(7, 2).floor(), MultiWordInt::from(3i64));
        assert_eq!(r(6, 4).reduced().denom(), &MultiWordInt::from(2u64));
        assert_eq!("3/7".parse::<Rational>().unwrap(), r(3, 7));
        assert_eq!("12".parse::<Rational>().unwrap(), r(12, 1));
        assert_eq!(r(3, 7).to_string(), "3/7");
        assert!((r(1, 3).to_f64() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn log2_examples() {
        assert_eq!(r(5, 2).floor_log2().unwrap(), 1);
        assert_eq!(r(5, 2).ceil_log2().unwrap(), 2);
        assert_eq!(r(8, 1).floor_log2().unwrap(), 3);
        assert_eq!(r(8, 1).ceil_log2().unwrap(), 3);
        assert_eq!(r(1, 8).floor_log2().unwrap(), -3);
        assert_eq!(r(3, 16).floor_log2().unwrap(), -3);
        assert_eq!(r(3, 16).ceil_log2().unwrap(), -2);
        assert!(r(0, 1).floor_log2().is_err());
        assert!(r(-1, 1).ceil_log2().is_err());
    }

    #[test]
    fn dyadic_round_examples() {
        let third = dyadic_round(&r(1, 3), 4);
        assert!(third.value() == r(5, 16) || third.value() == r(6, 16));
        assert_eq!(dyadic_round(&r(1, 2), 1).value(), r(1, 2));
    }

    #[test]
    fn inverse_identity() {
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = Rational::ratio((state >> 1) as i64 | 1, (state as u32 as i64) + 1).unwrap();
            assert_eq!(a.mul(&a.recip().unwrap()), Rational::one());
        }
    }

    /// Oracle: walk powers of two from 1 until the value is bracketed.
    fn log_oracle(x: &Rational) -> (i64, i64) {
        let mut f = 0i64;
        let two = Rational::from(2u64);
        let half = r(1, 2);
        let mut p = Rational::one();
        if *x >= p {
            while p.mul(&two) <= *x {
                p = p.mul(&two);
                f += 1;
            }
        } else {
            while p > *x {
                p = p.mul(&half);
                f -= 1;
            }
        }
        let c = if p == *x { f } else { f + 1 };
        (f, c)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn log2_matches_oracle(a in 1u128.., b in 1u128..) {
            let x = Rational::ratio(a, b).unwrap();
            let (f, c) = log_oracle(&x);
            prop_assert_eq!(x.floor_log2().unwrap(), f);
            prop_assert_eq!(x.ceil_log2().unwrap(), c);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1_000))]
        #[test]
        fn dyadic_round_error_bound(a in 0u64..=1 << 40, b in 1u64..=1 << 40, i in 1u32..=64) {
            let x = Rational::ratio(a.min(2 * b), b).unwrap();
            let d = dyadic_round(&x, i);
            let err = d.value().sub(&x);
            let bound = Rational::dyadic(MultiWordInt::one(), i as u64);
            prop_assert!(err <= bound && err.neg() <= bound);
            prop_assert!(d.frac_bits <= i as u64 + 1);
        }

        #[test]
        fn field_identities(a in rat_strategy(3), b in rat_strategy(3)) {
            prop_assert_eq!(a.add(&b).sub(&b), a.clone());
            if !b.is_zero() {
                prop_assert_eq!(a.mul(&b).div(&b).unwrap(), a.clone());
            }
            let f = if a.is_positive() { Some(a.floor_log2().unwrap()) } else { None };
            if let Some(f) = f {
                let lo = if f >= 0 { Rational::from_int(MultiWordInt::from_nat(Nat::pow2(f as u64))) }
                         else { Rational::dyadic(MultiWordInt::one(), f.unsigned_abs()) };
                prop_assert!(lo <= a);
                prop_assert!(a < lo.mul(&Rational::from(2u64)));
            }
        }
    }
}
