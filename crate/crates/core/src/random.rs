//! Seedable entropy source and lazily revealed uniform reals.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use smallvec::SmallVec;

use crate::arith::{cmp_limbs, Nat};
use crate::error::{invalid, Result};
use std::cmp::Ordering;

/// Deterministic stream of uniform 64-bit words.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: Xoshiro256PlusPlus,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed, rng: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, e.g. one per worker thread.
    pub fn fork(&mut self, stream: u64) -> RandomSource {
        let mix = self.random_word() ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        RandomSource::new(mix)
    }

    #[inline]
    pub fn random_word(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, m)`.
    pub fn random_below(&mut self, m: u64) -> Result<u64> {
        if m == 0 {
            return Err(invalid("random_below requires m >= 1"));
        }
        Ok(self.below(m))
    }

    /// Unchecked variant of [`random_below`](Self::random_below); `m` must be positive.
    #[inline]
    pub(crate) fn below(&mut self, m: u64) -> u64 {
        debug_assert!(m > 0);
        if m & (m - 1) == 0 {
            return self.random_word() & (m - 1);
        }
        let mask = u64::MAX >> (m - 1).leading_zeros();
        loop {
            let x = self.random_word() & mask;
            if x < m {
                return x;
            }
        }
    }

    /// A fair coin.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.random_word() >> 63 == 1
    }

    /// Decides `U < m / 2^shift` for a fresh uniform `U`, `shift <= 128`;
    /// the same decision and words as [`LazyUniform::less_than_dyadic`].
    #[inline]
    pub fn below_dyadic(&mut self, m: u128, shift: u32) -> bool {
        debug_assert!(shift <= 128);
        if m == 0 {
            return false;
        }
        if shift < 128 && m >> shift != 0 {
            return true;
        }
        if shift == 0 {
            return true;
        }
        let w0 = self.random_word() as u128;
        if shift <= 64 {
            return w0 >> (64 - shift) < m;
        }
        let top = (w0 << 64) | self.random_word() as u128;
        top >> (128 - shift) < m
    }

    pub fn uniform(&mut self) -> LazyUniform<'_> {
        LazyUniform::new(self)
    }
}

/// A uniform real `U` in `[0, 1)` whose binary expansion is drawn on demand,
/// one 64-bit word at a time, most significant bit first.
pub struct LazyUniform<'a> {
    src: &'a mut RandomSource,
    words: SmallVec<[u64; 2]>,
}

impl<'a> LazyUniform<'a> {
    pub fn new(src: &'a mut RandomSource) -> Self {
        LazyUniform { src, words: SmallVec::new() }
    }

    /// A uniform whose first word has already been drawn from `src`.
    pub(crate) fn starting_with(src: &'a mut RandomSource, first: u64) -> Self {
        let mut words = SmallVec::new();
        words.push(first);
        LazyUniform { src, words }
    }

    /// Word `r` of the expansion (bits `64r .. 64r + 63`).
    #[inline]
    pub fn word(&mut self, r: usize) -> u64 {
        while self.words.len() <= r {
            let w = self.src.random_word();
            self.words.push(w);
        }
        self.words[r]
    }

    pub fn reveal_bit(&mut self, i: u64) -> bool {
        let w = self.word((i / 64) as usize);
        (w >> (63 - i % 64)) & 1 == 1
    }

    pub fn revealed_bits(&self) -> u64 {
        self.words.len() as u64 * 64
    }

    /// `floor(U * 2^(64r))` as an integer.
    fn prefix(&mut self, r: usize) -> Nat {
        self.word(r - 1);
        let limbs: SmallVec<[u64; 4]> = self.words[..r].iter().rev().copied().collect();
        Nat::from_slice(&limbs)
    }

    /// `floor(U * 2^bits)`.
    pub fn top_bits(&mut self, bits: u64) -> Nat {
        if bits == 0 {
            return Nat::zero();
        }
        let r = bits.div_ceil(64) as usize;
        self.prefix(r).shr(r as u64 * 64 - bits)
    }

    /// Decides `U < m / 2^shift`.
    pub fn less_than_dyadic(&mut self, m: &Nat, shift: u64) -> bool {
        if m.is_zero() {
            return false;
        }
        if shift <= 64 {
            if m.bit_len() > shift {
                return true;
            }
            if shift == 0 {
                return true;
            }
            let top = self.word(0) >> (64 - shift);
            return top < m.to_u64().expect("fits in a word");
        }
        if m.bit_len() > shift {
            return true;
        }
        self.top_bits(shift) < *m
    }

    /// Decides `U < a / b` for `b > 0`. Almost always settled by the first word.
    pub fn less_than_ratio(&mut self, a: &Nat, b: &Nat) -> bool {
        debug_assert!(!b.is_zero());
        if a.is_zero() {
            return false;
        }
        if a >= b {
            return true;
        }
        if b.len() <= 7 {
            if let Some(v) = self.first_word_decides(a.limbs(), b.limbs()) {
                return v;
            }
        }
        let mut r = 1;
        loop {
            r += 1;
            let lhs = self.prefix(r).mul(b);
            let rhs = a.shl(64 * r as u64);
            if lhs >= rhs {
                return false;
            }
            if lhs.add(b) <= rhs {
                return true;
            }
        }
    }

    /// With `u` the first word: `u*b >= a*2^64` means `U >= a/b`, and
    /// `(u+1)*b <= a*2^64` means `U < a/b`.
    #[inline]
    fn first_word_decides(&mut self, a: &[u64], b: &[u64]) -> Option<bool> {
        let u = self.word(0);
        let mut lhs = [0u64; 9];
        let mut carry = 0u128;
        for (i, &w) in b.iter().enumerate() {
            let t = w as u128 * u as u128 + carry;
            lhs[i] = t as u64;
            carry = t >> 64;
        }
        lhs[b.len()] = carry as u64;
        let mut rhs = [0u64; 9];
        rhs[1..=a.len()].copy_from_slice(a);
        let n = b.len().max(a.len()) + 1;
        if cmp_limbs(&lhs[..n], &rhs[..n]) != Ordering::Less {
            return Some(false);
        }
        let mut c = 0u128;
        for (i, limb) in lhs[..n].iter_mut().enumerate() {
            let t = *limb as u128 + b.get(i).copied().unwrap_or(0) as u128 + c;
            *limb = t as u64;
            c = t >> 64;
        }
        if c == 0 && cmp_limbs(&lhs[..n], &rhs[..n]) != Ordering::Greater {
            return Some(true);
        }
        None
    }
}
