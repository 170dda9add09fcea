//! Unsigned multi-word magnitudes, little-endian 64-bit limbs.
//!
//! Values of up to four words live inline, which covers every quantity on the
//! query path (weights, parameterized totals, bucket majorants). Larger values
//! spill to the heap transparently.

use std::cmp::Ordering;
use std::fmt;

use smallvec::{smallvec, SmallVec};

pub(crate) type Limbs = SmallVec<[u64; 4]>;

/// Canonical unsigned integer: no most-significant zero limbs, zero is empty.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Nat {
    limbs: Limbs,
}

impl Nat {
    pub fn zero() -> Self {
        Nat { limbs: SmallVec::new() }
    }

    pub fn one() -> Self {
        Nat::from_u64(1)
    }

    pub fn from_u64(v: u64) -> Self {
        if v == 0 {
            Nat::zero()
        } else {
            Nat { limbs: smallvec![v] }
        }
    }

    pub fn from_u128(v: u128) -> Self {
        let lo = v as u64;
        let hi = (v >> 64) as u64;
        let mut n = Nat { limbs: smallvec![lo, hi] };
        n.normalize();
        n
    }

    pub(crate) fn from_limbs(limbs: Limbs) -> Self {
        let mut n = Nat { limbs };
        n.normalize();
        n
    }

    pub fn from_slice(words: &[u64]) -> Self {
        Nat::from_limbs(SmallVec::from_slice(words))
    }

    /// `2^k`.
    pub fn pow2(k: u64) -> Self {
        let word = (k / 64) as usize;
        let mut limbs: Limbs = smallvec![0; word + 1];
        limbs[word] = 1u64 << (k % 64);
        Nat { limbs }
    }

    fn normalize(&mut self) {
        while let Some(&0) = self.limbs.last() {
            self.limbs.pop();
        }
    }

    #[inline]
    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.limbs.is_empty()
    }

    #[inline]
    pub fn is_one(&self) -> bool {
        self.limbs.len() == 1 && self.limbs[0] == 1
    }

    /// Number of 64-bit limbs.
    #[allow(clippy::len_without_is_empty)]
    #[inline]
    pub fn len(&self) -> usize {
        self.limbs.len()
    }

    /// Number of significant bits; zero for zero.
    pub fn bit_len(&self) -> u64 {
        match self.limbs.last() {
            None => 0,
            Some(&top) => 64 * (self.limbs.len() as u64 - 1) + (64 - top.leading_zeros() as u64),
        }
    }

    pub fn bit(&self, i: u64) -> bool {
        let w = (i / 64) as usize;
        w < self.limbs.len() && (self.limbs[w] >> (i % 64)) & 1 == 1
    }

    pub fn trailing_zeros(&self) -> Option<u64> {
        self.limbs
            .iter()
            .position(|&w| w != 0)
            .map(|i| i as u64 * 64 + self.limbs[i].trailing_zeros() as u64)
    }

    pub fn to_u64(&self) -> Option<u64> {
        match self.limbs.len() {
            0 => Some(0),
            1 => Some(self.limbs[0]),
            _ => None,
        }
    }

    pub fn to_u128(&self) -> Option<u128> {
        match self.limbs.len() {
            0 => Some(0),
            1 => Some(self.limbs[0] as u128),
            2 => Some(self.limbs[0] as u128 | (self.limbs[1] as u128) << 64),
            _ => None,
        }
    }

    /// Nearest-ish `f64`; only used for reporting.
    pub fn to_f64(&self) -> f64 {
        let bits = self.bit_len();
        if bits <= 64 {
            return self.to_u64().unwrap_or(0) as f64;
        }
        let shift = bits - 64;
        let top = self.shr(shift).to_u64().unwrap_or(u64::MAX) as f64;
        top * 2f64.powi(shift.min(i32::MAX as u64) as i32)
    }

    pub fn add(&self, other: &Nat) -> Nat {
        let (long, short) = if self.len() >= other.len() { (self, other) } else { (other, self) };
        let mut limbs: Limbs = SmallVec::with_capacity(long.len() + 1);
        let mut carry = false;
        for i in 0..long.len() {
            let b = short.limbs.get(i).copied().unwrap_or(0);
            let (s1, c1) = long.limbs[i].overflowing_add(b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            limbs.push(s2);
            carry = c1 || c2;
        }
        if carry {
            limbs.push(1);
        }
        Nat { limbs }
    }

    pub fn add_u64(&self, v: u64) -> Nat {
        self.add(&Nat::from_u64(v))
    }

    /// `self - other`; panics if `other > self`.
    pub fn sub(&self, other: &Nat) -> Nat {
        self.checked_sub(other).expect("Nat subtraction underflow")
    }

    pub fn checked_sub(&self, other: &Nat) -> Option<Nat> {
        if self < other {
            return None;
        }
        let mut limbs: Limbs = SmallVec::with_capacity(self.len());
        let mut borrow = false;
        for i in 0..self.len() {
            let b = other.limbs.get(i).copied().unwrap_or(0);
            let (d1, b1) = self.limbs[i].overflowing_sub(b);
            let (d2, b2) = d1.overflowing_sub(borrow as u64);
            limbs.push(d2);
            borrow = b1 || b2;
        }
        debug_assert!(!borrow);
        Some(Nat::from_limbs(limbs))
    }

    pub fn mul(&self, other: &Nat) -> Nat {
        if self.is_zero() || other.is_zero() {
            return Nat::zero();
        }
        if other.len() == 1 {
            return self.mul_u64(other.limbs[0]);
        }
        if self.len() == 1 {
            return other.mul_u64(self.limbs[0]);
        }
        let mut limbs: Limbs = smallvec![0; self.len() + other.len()];
        mul_into(&mut limbs, &self.limbs, &other.limbs);
        Nat::from_limbs(limbs)
    }

    pub fn mul_u64(&self, m: u64) -> Nat {
        if m == 0 || self.is_zero() {
            return Nat::zero();
        }
        let n = self.len();
        let mut limbs: Limbs = smallvec![0; n + 1];
        let mut carry = 0u64;
        for i in 0..n {
            let p = self.limbs[i] as u128 * m as u128 + carry as u128;
            limbs[i] = p as u64;
            carry = (p >> 64) as u64;
        }
        if carry != 0 {
            limbs[n] = carry;
        } else {
            limbs.truncate(n);
        }
        Nat { limbs }
    }

    pub fn mul_u128(&self, m: u128) -> Nat {
        self.mul(&Nat::from_u128(m))
    }

    pub fn shl(&self, bits: u64) -> Nat {
        if self.is_zero() {
            return Nat::zero();
        }
        let words = (bits / 64) as usize;
        let rem = (bits % 64) as u32;
        let n = self.len();
        let mut limbs: Limbs = smallvec![0; n + words + 1];
        if rem == 0 {
            limbs[words..words + n].copy_from_slice(&self.limbs);
        } else {
            let mut carry = 0u64;
            for i in 0..n {
                let w = self.limbs[i];
                limbs[words + i] = (w << rem) | carry;
                carry = w >> (64 - rem);
            }
            limbs[words + n] = carry;
        }
        if limbs[n + words] == 0 {
            limbs.truncate(n + words);
        }
        Nat { limbs }
    }

    pub fn shr(&self, bits: u64) -> Nat {
        let words = (bits / 64) as usize;
        if words >= self.len() {
            return Nat::zero();
        }
        let rem = (bits % 64) as u32;
        let src = &self.limbs[words..];
        let mut limbs: Limbs = SmallVec::with_capacity(src.len());
        if rem == 0 {
            limbs.extend_from_slice(src);
        } else {
            for i in 0..src.len() {
                let hi = src.get(i + 1).copied().unwrap_or(0);
                limbs.push((src[i] >> rem) | (hi << (64 - rem)));
            }
        }
        Nat::from_limbs(limbs)
    }

    /// Quotient and remainder by a single word.
    pub fn divrem_u64(&self, d: u64) -> (Nat, u64) {
        assert!(d != 0, "division by zero");
        let mut q: Limbs = smallvec![0; self.len()];
        let mut rem = 0u128;
        for i in (0..self.len()).rev() {
            let cur = (rem << 64) | self.limbs[i] as u128;
            q[i] = (cur / d as u128) as u64;
            rem = cur % d as u128;
        }
        (Nat::from_limbs(q), rem as u64)
    }

    /// Quotient and remainder (Knuth, TAOCP vol. 2, algorithm D).
    pub fn divrem(&self, divisor: &Nat) -> (Nat, Nat) {
        assert!(!divisor.is_zero(), "division by zero");
        if self < divisor {
            return (Nat::zero(), self.clone());
        }
        if divisor.len() == 1 {
            let (q, r) = self.divrem_u64(divisor.limbs[0]);
            return (q, Nat::from_u64(r));
        }
        let s = divisor.limbs.last().unwrap().leading_zeros() as u64;
        let vn = divisor.shl(s);
        let mut un = self.shl(s).limbs;
        if un.len() == self.len() {
            un.push(0);
        }
        let n = vn.len();
        let m = un.len() - n - 1;
        let v = &vn.limbs;
        let b: u128 = 1 << 64;
        let mut q: Limbs = smallvec![0; m + 1];
        for j in (0..=m).rev() {
            let num = (un[j + n] as u128) << 64 | un[j + n - 1] as u128;
            let mut qhat = num / v[n - 1] as u128;
            let mut rhat = num % v[n - 1] as u128;
            while qhat >= b || qhat * v[n - 2] as u128 > (rhat << 64 | un[j + n - 2] as u128) {
                qhat -= 1;
                rhat += v[n - 1] as u128;
                if rhat >= b {
                    break;
                }
            }
            let mut borrow = 0u64;
            let mut carry = 0u64;
            for i in 0..n {
                let p = qhat * v[i] as u128 + carry as u128;
                carry = (p >> 64) as u64;
                let (t1, b1) = un[i + j].overflowing_sub(p as u64);
                let (t2, b2) = t1.overflowing_sub(borrow);
                un[i + j] = t2;
                borrow = b1 as u64 + b2 as u64;
            }
            let (t1, b1) = un[j + n].overflowing_sub(carry);
            let (t2, b2) = t1.overflowing_sub(borrow);
            un[j + n] = t2;
            if b1 || b2 {
                qhat -= 1;
                let mut c = 0u128;
                for i in 0..n {
                    let s = un[i + j] as u128 + v[i] as u128 + c;
                    un[i + j] = s as u64;
                    c = s >> 64;
                }
                un[j + n] = un[j + n].wrapping_add(c as u64);
            }
            q[j] = qhat as u64;
        }
        un.truncate(n);
        let r = Nat::from_limbs(un).shr(s);
        (Nat::from_limbs(q), r)
    }

    pub fn pow(&self, mut k: u64) -> Nat {
        let mut base = self.clone();
        let mut acc = Nat::one();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    pub fn gcd(&self, other: &Nat) -> Nat {
        let (mut a, mut b) = (self.clone(), other.clone());
        while !b.is_zero() {
            let r = a.divrem(&b).1;
            a = b;
            b = r;
        }
        a
    }

    pub fn to_hex(&self) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let mut s = format!("{:x}", self.limbs.last().unwrap());
        for w in self.limbs.iter().rev().skip(1) {
            s.push_str(&format!("{:016x}", w));
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<Nat> {
        if s.is_empty() {
            return None;
        }
        let digits = s.as_bytes();
        let mut limbs: Limbs = SmallVec::new();
        let mut end = digits.len();
        while end > 0 {
            let start = end.saturating_sub(16);
            let chunk = std::str::from_utf8(&digits[start..end]).ok()?;
            limbs.push(u64::from_str_radix(chunk, 16).ok()?);
            end = start;
        }
        Some(Nat::from_limbs(limbs))
    }

    pub fn to_decimal(&self) -> String {
        const CHUNK: u64 = 10_000_000_000_000_000_000;
        if self.is_zero() {
            return "0".to_string();
        }
        let mut parts = Vec::new();
        let mut cur = self.clone();
        while !cur.is_zero() {
            let (q, r) = cur.divrem_u64(CHUNK);
            parts.push(r);
            cur = q;
        }
        let mut s = parts.pop().unwrap().to_string();
        for p in parts.iter().rev() {
            s.push_str(&format!("{:019}", p));
        }
        s
    }

    pub fn from_decimal(s: &str) -> Option<Nat> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut acc = Nat::zero();
        for chunk in s.as_bytes().chunks(19) {
            let text = std::str::from_utf8(chunk).ok()?;
            let v: u64 = text.parse().ok()?;
            acc = acc.mul_u64(10u64.pow(chunk.len() as u32)).add_u64(v);
        }
        Some(acc)
    }
}

/// Schoolbook product of `a` and `b` into `out`, which must be zeroed and
/// hold at least `a.len() + b.len()` limbs.
pub(crate) fn mul_into(out: &mut [u64], a: &[u64], b: &[u64]) {
    for (i, &x) in a.iter().enumerate() {
        let mut carry = 0u128;
        for (j, &y) in b.iter().enumerate() {
            let t = x as u128 * y as u128 + out[i + j] as u128 + carry;
            out[i + j] = t as u64;
            carry = t >> 64;
        }
        let mut k = i + b.len();
        while carry != 0 {
            let t = out[k] as u128 + carry;
            out[k] = t as u64;
            carry = t >> 64;
            k += 1;
        }
    }
}

/// Compares little-endian limb slices, ignoring high zero limbs.
pub(crate) fn cmp_limbs(a: &[u64], b: &[u64]) -> Ordering {
    let la = a.len() - a.iter().rev().take_while(|&&w| w == 0).count();
    let lb = b.len() - b.iter().rev().take_while(|&&w| w == 0).count();
    if la != lb {
        return la.cmp(&lb);
    }
    for i in (0..la).rev() {
        match a[i].cmp(&b[i]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl Ord for Nat {
    #[inline]
    fn cmp(&self, other: &Self) -> Ordering {
        // Both sides are canonical, so lengths decide first.
        let (a, b) = (&self.limbs, &other.limbs);
        if a.len() != b.len() {
            return a.len().cmp(&b.len());
        }
        for i in (0..a.len()).rev() {
            if a[i] != b[i] {
                return a[i].cmp(&b[i]);
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Nat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl fmt::Display for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

impl From<u64> for Nat {
    fn from(v: u64) -> Self {
        Nat::from_u64(v)
    }
}

impl From<u128> for Nat {
    fn from(v: u128) -> Self {
        Nat::from_u128(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    fn big(n: &Nat) -> BigUint {
        BigUint::from_slice(
            &n.limbs().iter().flat_map(|w| [*w as u32, (*w >> 32) as u32]).collect::<Vec<_>>(),
        )
    }

    fn nat_strategy() -> impl Strategy<Value = Nat> {
        prop::collection::vec(any::<u64>(), 0..7).prop_map(|v| Nat::from_slice(&v))
    }

    #[test]
    fn canonical_zero() {
        assert!(Nat::from_slice(&[0, 0, 0]).is_zero());
        assert_eq!(Nat::from_slice(&[0, 0]).len(), 0);
        assert_eq!(Nat::zero().bit_len(), 0);
        assert_eq!(Nat::pow2(130).bit_len(), 131);
    }

    #[test]
    fn divrem_hits_the_add_back_branch() {
        // Classic case where the trial quotient overshoots by one.
        let u = Nat::from_slice(&[0, 0, 0x8000_0000_0000_0000, 0x7fff_ffff_ffff_ffff]);
        let v = Nat::from_slice(&[1, 0, 0x8000_0000_0000_0000]);
        let (q, r) = u.divrem(&v);
        assert_eq!(big(&q), big(&u) / big(&v));
        assert_eq!(big(&r), big(&u) % big(&v));
    }

    #[test]
    fn decimal_and_hex_round_trip() {
        let n = Nat::from_decimal("123456789012345678901234567890123456789").unwrap();
        assert_eq!(n.to_decimal(), "123456789012345678901234567890123456789");
        assert_eq!(Nat::from_hex(&n.to_hex()).unwrap(), n);
        assert_eq!(Nat::from_hex("ff").unwrap().to_u64(), Some(255));
        assert!(Nat::from_decimal("12a").is_none());
    }

    proptest! {
        #[test]
        fn arithmetic_matches_reference(a in nat_strategy(), b in nat_strategy()) {
            prop_assert_eq!(big(&a.add(&b)), big(&a) + big(&b));
            prop_assert_eq!(big(&a.mul(&b)), big(&a) * big(&b));
            prop_assert_eq!(a.cmp(&b), big(&a).cmp(&big(&b)));
            if a >= b {
                prop_assert_eq!(big(&a.sub(&b)), big(&a) - big(&b));
            }
            if !b.is_zero() {
                let (q, r) = a.divrem(&b);
                prop_assert_eq!(big(&q), big(&a) / big(&b));
                prop_assert_eq!(big(&r), big(&a) % big(&b));
            }
        }

        #[test]
        fn shifts_match_reference(a in nat_strategy(), s in 0u64..300) {
            prop_assert_eq!(big(&a.shl(s)), big(&a) << s as usize);
            prop_assert_eq!(big(&a.shr(s)), big(&a) >> s as usize);
        }

        #[test]
        fn decimal_round_trip(a in nat_strategy()) {
            prop_assert_eq!(Nat::from_decimal(&a.to_decimal()).unwrap(), a.clone());
            prop_assert_eq!(a.to_decimal(), big(&a).to_string());
        }
    }
}
