//! Exact Bernoulli, bounded geometric and truncated geometric variates.
//!
//! Every sampler here is exact: decisions compare a lazily revealed uniform
//! real against the true rational probability, reading more bits only when the
//! bits seen so far cannot separate the two.
//!
//! The `*_raw` functions take probabilities as numerator/denominator [`Nat`]
//! pairs and skip validation; the structures call them on the query path.

use std::cell::{Cell, OnceCell};

use crate::arith::{DyadicApprox, MultiWordInt, Nat, Rational};
use crate::error::{invalid, Error, Result};
use crate::random::{LazyUniform, RandomSource};

/// Precision (bits) beyond which [`ber_approx`] compares against the exact value.
pub const APPROX_PRECISION_CAP: u32 = 256;

/// Fixed-point precision (bits) beyond which power coins fall back to exact powers.
const POWER_PRECISION_CAP: u64 = 1024;

/// A probability whose `i`-bit approximations are cheap to produce.
pub trait ApproximableProbability {
    /// A dyadic value within `2^-i` of the target.
    fn approx(&self, i: u32) -> DyadicApprox;
    /// The target itself.
    fn exact(&self) -> Rational;
    /// `approx(i)` as `(mantissa, frac_bits)` when it fits in a word and is
    /// cheap to produce that way.
    fn approx_word(&self, _i: u32) -> Option<(u64, u64)> {
        None
    }
}

fn check_unit(p: &Rational) -> Result<()> {
    if p.in_unit_interval() {
        Ok(())
    } else {
        Err(invalid(format!("probability {p} outside [0, 1]")))
    }
}

fn check_open_unit(p: &Rational) -> Result<(Nat, Nat)> {
    if !p.is_positive() || p >= &Rational::one() {
        return Err(invalid(format!("probability {p} outside (0, 1)")));
    }
    Ok((p.numer().magnitude().clone(), p.denom().magnitude().clone()))
}

fn check_count(n: u64) -> Result<()> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    Ok(())
}

/// `Ber(p)` for rational `p` in `[0, 1]`.
pub fn ber_rational(src: &mut RandomSource, p: &Rational) -> Result<bool> {
    check_unit(p)?;
    Ok(ber_raw(src, p.numer().magnitude(), p.denom().magnitude()))
}

/// `Ber(min(1, a / b))`.
#[inline]
pub fn ber_raw(src: &mut RandomSource, a: &Nat, b: &Nat) -> bool {
    src.uniform().less_than_ratio(a, b)
}

/// `Ber(p)` for a probability known through its approximations.
pub fn ber_approx<P: ApproximableProbability + ?Sized>(src: &mut RandomSource, ap: &P) -> bool {
    let mut u = src.uniform();
    let mut i = 2u32;
    while i <= APPROX_PRECISION_CAP {
        let decided = match ap.approx_word(i) {
            Some((m, f)) if f.max(i as u64) + 2 <= 64 => separate_word(&mut u, m, f, i),
            _ => separate(&mut u, &ap.approx(i), i),
        };
        if let Some(decision) = decided {
            return decision;
        }
        i *= 2;
    }
    let p = ap.exact();
    if !p.is_positive() {
        return false;
    }
    u.less_than_ratio(p.numer().magnitude(), p.denom().magnitude())
}

/// Decides `U < p` given `|a - p| <= 2^-i`, if the revealed prefix of `U`
/// lies entirely on one side of `[a - 2^-i, a + 2^-i]`.
fn separate(u: &mut LazyUniform<'_>, a: &DyadicApprox, i: u32) -> Option<bool> {
    let k = a.frac_bits.max(i as u64) + 2;
    let centre = a.mantissa.shl(k - a.frac_bits);
    let radius = MultiWordInt::from_nat(Nat::pow2(k - i as u64));
    let lo = &centre - &radius;
    let hi = &centre + &radius;
    let t = MultiWordInt::from_nat(u.top_bits(k));
    // U lies in [t, t + 1) / 2^k.
    if &t + &MultiWordInt::one() <= lo {
        Some(true)
    } else if t >= hi {
        Some(false)
    } else {
        None
    }
}

/// [`separate`] for a word-sized mantissa and at most 64 revealed bits.
fn separate_word(u: &mut LazyUniform<'_>, m: u64, f: u64, i: u32) -> Option<bool> {
    let k = f.max(i as u64) + 2;
    let centre = (m as i128) << (k - f);
    let radius = 1i128 << (k - i as u64);
    let t = (u.word(0) >> (64 - k)) as i128;
    if t < centre - radius {
        Some(true)
    } else if t >= centre + radius {
        Some(false)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Powers of a probability: Ber(q^k)
// ---------------------------------------------------------------------------

const ONE_64: u128 = 1 << 64;

/// `x y / 2^64` rounded down or up, for `x, y <= 2^64`. Branch-free.
#[inline]
fn fix_mul64(x: u128, y: u128, up: bool) -> u128 {
    debug_assert!(x <= ONE_64 && y <= ONE_64);
    let (a, x0) = (x >> 64, x as u64 as u128);
    let (b, y0) = (y >> 64, y as u64 as u128);
    let p = x0 * y0;
    ((a & b) << 64) + a * y0 + b * x0 + (p >> 64) + (up & (p as u64 != 0)) as u128
}

fn fix_pow64(x: u128, mut k: u64, up: bool) -> u128 {
    if k == 1 {
        return x;
    }
    let mut base = x;
    let mut acc = ONE_64;
    while k > 0 {
        // Select without a branch: the bits of `k` are often random.
        let keep = ((k & 1) as u128).wrapping_sub(1);
        acc = (acc & keep) | (fix_mul64(acc, base, up) & !keep);
        k >>= 1;
        base = fix_mul64(base, base, up);
    }
    acc
}

fn fix_pow(x: &Nat, mut k: u64, bits: u64, up: bool) -> Nat {
    let round = Nat::pow2(bits).sub(&Nat::one());
    let mul = |a: &Nat, b: &Nat| {
        let p = a.mul(b);
        if up {
            p.add(&round).shr(bits)
        } else {
            p.shr(bits)
        }
    };
    let mut base = x.clone();
    let mut acc = Nat::pow2(bits);
    while k > 0 {
        if k & 1 == 1 {
            acc = mul(&acc, &base);
        }
        k >>= 1;
        if k > 0 {
            base = mul(&base, &base);
        }
    }
    acc
}

/// Floor and ceiling of `num / den * 2^bits`.
pub(crate) fn fix_bounds(num: &Nat, den: &Nat, bits: u64) -> (Nat, Nat) {
    let (q, r) = num.shl(bits).divrem(den);
    let hi = if r.is_zero() { q.clone() } else { q.add_u64(1) };
    (q, hi)
}

/// Coins of bias `min(1, w / W)` for weights `w < 2^s`, one `W` and `s`.
///
/// Holds 64-bit fixed-point bounds on `c = 2^s / W`; a coin for `w` is then
/// almost always settled by one word against `c w / 2^s`.
pub(crate) struct ScaledCoin<'a> {
    num: &'a Nat,
    den: &'a Nat,
    s: u32,
    lo: u128,
    hi: u128,
    // `s <= 64` and `hi < 2^65`: products fit one wide multiply.
    narrow: bool,
}

impl<'a> ScaledCoin<'a> {
    /// `W = num / den`. `None` when `2^s / W` is too large for the word path.
    pub(crate) fn new(num: &'a Nat, den: &'a Nat, s: u32) -> Option<Self> {
        if s > 128 {
            return None;
        }
        let (lo, hi) = fix_bounds(&den.shl(s as u64), num, 64);
        let (lo, hi) = (lo.to_u128()?, hi.to_u128()?);
        let narrow = (1..=64).contains(&s) && hi >> 65 == 0;
        Some(ScaledCoin { num, den, s, lo, hi, narrow })
    }

    #[inline(always)]
    pub(crate) fn sample(&self, src: &mut RandomSource, w: u128) -> bool {
        debug_assert!(self.s == 128 || w >> self.s == 0);
        if w == 0 {
            return false;
        }
        let (l, h) = if self.narrow {
            let x = ((w as u64) << (64 - self.s)) as u128;
            let (lf, hf) = ((self.lo as u64 as u128) * x, (self.hi as u64 as u128) * x);
            ((self.lo >> 64) * x + (lf >> 64), (self.hi >> 64) * x + (hf >> 64) + (hf as u64 != 0) as u128)
        } else {
            (mul_shr(self.lo, w, self.s, false), mul_shr(self.hi, w, self.s, true))
        };
        if l >= ONE_64 {
            return true;
        }
        if h >= ONE_64 && self.den.mul_u128(w) >= *self.num {
            return true;
        }
        let word = src.random_word() as u128;
        let below = word < l;
        if below | (word >= h) {
            return below;
        }
        LazyUniform::starting_with(src, word as u64).less_than_ratio(&self.den.mul_u128(w), self.num)
    }
}

/// `floor` or `ceil` of `a b / 2^s`, saturating.
#[inline(always)]
fn mul_shr(a: u128, b: u128, s: u32, up: bool) -> u128 {
    let (hi, lo) = mul_wide(a, b);
    let (mut qh, mut ql) = if s == 0 {
        (hi, lo)
    } else if s < 128 {
        (hi >> s, (lo >> s) | (hi << (128 - s)))
    } else {
        (0, hi >> (s - 128))
    };
    if up {
        let rem = if s == 0 {
            false
        } else if s < 128 {
            lo & ((1u128 << s) - 1) != 0
        } else {
            lo != 0 || (s > 128 && hi & ((1u128 << (s - 128)) - 1) != 0)
        };
        if rem {
            let (v, carry) = ql.overflowing_add(1);
            ql = v;
            qh += carry as u128;
        }
    }
    if qh != 0 {
        u128::MAX
    } else {
        ql
    }
}

/// Full 256-bit product as `(high, low)`.
#[inline(always)]
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const M: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & M);
    let (b1, b0) = (b >> 64, b & M);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & M) + (p10 & M);
    let lo = (p00 & M) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// Decides `U < (qn / qd)^k` for `qn <= qd`, refining interval enclosures of
/// the power until they separate from the revealed prefix of `U`.
pub fn less_than_power(u: &mut LazyUniform<'_>, qn: &Nat, qd: &Nat, k: u64) -> bool {
    PowerCoin::new(qn, qd).less_than(u, k)
}

/// Coins of bias `q^k` for one `q = qn / qd` and varying `k`.
pub(crate) struct PowerCoin<'a> {
    qn: &'a Nat,
    qd: &'a Nat,
    /// Floor and ceiling of `q * 2^64`.
    lo: u128,
    hi: u128,
    /// Set when `q` is exactly 0 or 1.
    fixed: Option<bool>,
}

impl<'a> PowerCoin<'a> {
    pub(crate) fn new(qn: &'a Nat, qd: &'a Nat) -> Self {
        let (lo, hi) = if qn >= qd {
            (ONE_64, ONE_64)
        } else if let (Some(n), Some(d)) = (qn.to_u64(), qd.to_u64()) {
            let x = (n as u128) << 64;
            let q = x / d as u128;
            (q, if x % d as u128 == 0 { q } else { q + 1 })
        } else {
            let (l, h) = fix_bounds(qn, qd, 64);
            (l.to_u128().expect("q < 1"), h.to_u128().expect("q <= 1"))
        };
        let fixed = if qn >= qd {
            Some(true)
        } else if qn.is_zero() {
            Some(false)
        } else {
            None
        };
        PowerCoin { qn, qd, lo, hi, fixed }
    }

    /// Lower and upper 64-bit fixed-point bounds on `q^k`.
    #[inline]
    fn bounds(&self, k: u64) -> (u128, u128) {
        (fix_pow64(self.lo, k, false), fix_pow64(self.hi, k, true))
    }

    #[inline]
    pub(crate) fn sample(&self, src: &mut RandomSource, k: u64) -> bool {
        if k == 0 {
            return true;
        }
        if let Some(v) = self.fixed {
            return v;
        }
        let w = src.random_word() as u128;
        let l = fix_pow64(self.lo, k, false);
        if w < l {
            return true;
        }
        let h = fix_pow64(self.hi, k, true);
        self.settle(src, w, h, k)
    }

    /// [`sample`](Self::sample) with the bounds for `k` already at hand.
    #[inline]
    fn sample_with(&self, src: &mut RandomSource, k: u64, (l, h): (u128, u128)) -> bool {
        let w = src.random_word() as u128;
        if w < l {
            return true;
        }
        self.settle(src, w, h, k)
    }

    #[inline]
    fn settle(&self, src: &mut RandomSource, w: u128, h: u128, k: u64) -> bool {
        if w >= h {
            return false;
        }
        refine_power(&mut LazyUniform::starting_with(src, w as u64), self.qn, self.qd, k)
    }

    pub(crate) fn less_than(&self, u: &mut LazyUniform<'_>, k: u64) -> bool {
        if k == 0 {
            return true;
        }
        if let Some(v) = self.fixed {
            return v;
        }
        let l = fix_pow64(self.lo, k, false);
        let w = u.word(0) as u128;
        if w < l {
            return true;
        }
        let h = fix_pow64(self.hi, k, true);
        if w >= h {
            return false;
        }
        refine_power(u, self.qn, self.qd, k)
    }
}

#[cold]
fn refine_power(u: &mut LazyUniform<'_>, qn: &Nat, qd: &Nat, k: u64) -> bool {
    let mut bits = 128;
    while bits <= POWER_PRECISION_CAP {
        let (lo, hi) = fix_bounds(qn, qd, bits);
        let l = fix_pow(&lo, k, bits, false);
        if u.less_than_dyadic(&l, bits) {
            return true;
        }
        let h = fix_pow(&hi, k, bits, true);
        if !u.less_than_dyadic(&h, bits) {
            return false;
        }
        bits *= 2;
    }
    u.less_than_ratio(&qn.pow(k), &qd.pow(k))
}

/// `Ber((qn / qd)^k)`.
#[inline]
pub fn ber_power_raw(src: &mut RandomSource, qn: &Nat, qd: &Nat, k: u64) -> bool {
    less_than_power(&mut src.uniform(), qn, qd, k)
}

/// `Ber(q^k)` for rational `q` in `[0, 1]`.
pub fn ber_power(src: &mut RandomSource, q: &Rational, k: u64) -> Result<bool> {
    check_unit(q)?;
    Ok(ber_power_raw(src, q.numer().magnitude(), q.denom().magnitude(), k))
}

// ---------------------------------------------------------------------------
// p* = (1 - (1 - q)^n) / (n q) and 1 / (2 p*)
// ---------------------------------------------------------------------------

fn check_pstar(q: &Rational, n: u64) -> Result<(Nat, Nat)> {
    check_count(n)?;
    if !q.is_positive() {
        return Err(invalid(format!("q = {q} must be positive")));
    }
    let (a, b) = (q.numer().magnitude().clone(), q.denom().magnitude().clone());
    if a.mul_u64(n) > b {
        return Err(Error::PreconditionViolation(format!("n * q = {n} * {q} exceeds 1")));
    }
    Ok((a, b))
}

/// `p*` as an exact rational: `(B^n - (B - A)^n) / (n A B^(n-1))` for `q = A / B`.
pub fn pstar_exact(q: &Rational, n: u64) -> Result<Rational> {
    let (a, b) = check_pstar(q, n)?;
    Ok(pstar_exact_raw(&a, &b, n))
}

fn pstar_exact_raw(a: &Nat, b: &Nat, n: u64) -> Rational {
    let num = b.pow(n).sub(&b.sub(a).pow(n));
    let den = a.mul_u64(n).mul(&b.pow(n - 1));
    Rational::from_nats(num, den).expect("positive denominator")
}

/// `p*` evaluated through its alternating binomial series.
#[derive(Clone, Debug)]
pub struct PStar {
    a: Nat,
    b: Nat,
    n: u64,
}

impl PStar {
    pub fn new(q: &Rational, n: u64) -> Result<Self> {
        let (a, b) = check_pstar(q, n)?;
        Ok(PStar { a, b, n })
    }

    pub(crate) fn from_raw(a: Nat, b: Nat, n: u64) -> Self {
        debug_assert!(a.mul_u64(n) <= b);
        PStar { a, b, n }
    }

    /// `sum_{j=1..J} a_j` with `J = min(n, i + 2)`, evaluated by Horner's rule
    /// in fixed point with `J` guard ulps, then rounded to `i + 1` bits.
    ///
    /// Terms satisfy `a_(j+1) / a_j = -q (n - j) / (j + 1)`, so the series is
    /// alternating with shrinking terms and the tail past `J` is at most
    /// `2^-(i+1)`; the fixed-point error is at most `J` ulps.
    fn series(&self, i: u32) -> DyadicApprox {
        let terms = self.n.min(i as u64 + 2);
        let guard = 64 - terms.leading_zeros() as u64 + 1;
        let bits = i as u64 + 3 + guard;
        let one = Nat::pow2(bits);
        let mut s = one.clone();
        for j in (1..terms).rev() {
            // s <- 1 - q (n - j) / (j + 1) * s, with the product rounded down.
            let num = s.mul(&self.a).mul_u64(self.n - j);
            let den = self.b.mul_u64(j + 1);
            let t = num.divrem(&den).0;
            s = one.sub(&t);
        }
        let drop = bits - (i as u64 + 1);
        let mantissa = s.add(&Nat::pow2(drop - 1)).shr(drop);
        DyadicApprox { mantissa: mantissa.into(), frac_bits: i as u64 + 1, precision: i }
    }
}

impl ApproximableProbability for PStar {
    fn approx(&self, i: u32) -> DyadicApprox {
        self.series(i)
    }

    /// [`PStar::series`] in native arithmetic, giving up on overflow.
    fn approx_word(&self, i: u32) -> Option<(u64, u64)> {
        let b = self.b.to_u64()?;
        let a = self.a.to_u64()?;
        let terms = self.n.min(i as u64 + 2);
        let guard = 64 - terms.leading_zeros() as u64 + 1;
        let bits = i as u64 + 3 + guard;
        if bits > 62 {
            return None;
        }
        let one = 1u128 << bits;
        let mut s = one;
        for j in (1..terms).rev() {
            let num = s.checked_mul((a as u128).checked_mul((self.n - j) as u128)?)?;
            s = one.checked_sub(num / (b as u128 * (j + 1) as u128))?;
        }
        let drop = bits - (i as u64 + 1);
        Some((((s + (1 << (drop - 1))) >> drop) as u64, i as u64 + 1))
    }

    fn exact(&self) -> Rational {
        pstar_exact_raw(&self.a, &self.b, self.n)
    }
}

/// `i`-bit approximation of `p*`.
pub fn pstar_approx(q: &Rational, n: u64, i: u32) -> Result<DyadicApprox> {
    Ok(PStar::new(q, n)?.approx(i))
}

/// `1 / (2 p*)`, approximated through an `(i + 2)`-bit approximation of `p*`.
#[derive(Clone, Debug)]
pub struct HalfInvPStar(PStar);

impl HalfInvPStar {
    pub fn new(q: &Rational, n: u64) -> Result<Self> {
        Ok(HalfInvPStar(PStar::new(q, n)?))
    }

    pub(crate) fn from_raw(a: Nat, b: Nat, n: u64) -> Self {
        HalfInvPStar(PStar::from_raw(a, b, n))
    }
}

impl ApproximableProbability for HalfInvPStar {
    fn approx(&self, i: u32) -> DyadicApprox {
        let a = self.0.approx(i + 2);
        let m = a.mantissa.magnitude();
        // round(2^(f + i + 1) / (2 m)) / 2^(i + 1)
        let num = Nat::pow2(a.frac_bits + i as u64 + 1).add(m);
        let mantissa = num.divrem(&m.shl(1)).0;
        DyadicApprox { mantissa: mantissa.into(), frac_bits: i as u64 + 1, precision: i }
    }

    fn approx_word(&self, i: u32) -> Option<(u64, u64)> {
        let (m, f) = self.0.approx_word(i + 2)?;
        if m == 0 || f + i as u64 + 1 > 120 {
            return None;
        }
        let num = (1u128 << (f + i as u64 + 1)) + m as u128;
        let mantissa = u64::try_from(num / (2 * m as u128)).ok()?;
        Some((mantissa, i as u64 + 1))
    }

    fn exact(&self) -> Rational {
        let p = self.0.exact();
        Rational::new(p.denom().clone(), p.numer().shl(1)).expect("p* > 0")
    }
}

/// `Ber(p*)` for `q > 0`, `n q <= 1`.
pub fn ber_pstar(src: &mut RandomSource, q: &Rational, n: u64) -> Result<bool> {
    Ok(ber_approx(src, &PStar::new(q, n)?))
}

/// `Ber(1 / (2 p*))` for `q > 0`, `n q <= 1`.
pub fn ber_half_inv_pstar(src: &mut RandomSource, q: &Rational, n: u64) -> Result<bool> {
    Ok(ber_approx(src, &HalfInvPStar::new(q, n)?))
}

// ---------------------------------------------------------------------------
// Bounded geometric: B-Geo(p, n) = min(n, Geo(p))
// ---------------------------------------------------------------------------

/// Reference bounded geometric: inverts `U >= (1 - p)^k` by binary search
/// over `k` with a single lazily revealed `U`.
pub fn bgeo_reference(src: &mut RandomSource, p: &Rational, n: u64) -> Result<u64> {
    let (pn, pd) = check_open_unit(p)?;
    check_count(n)?;
    Ok(bgeo_reference_raw(src, &pn, &pd, n))
}

pub fn bgeo_reference_raw(src: &mut RandomSource, pn: &Nat, pd: &Nat, n: u64) -> u64 {
    let qn = pd.sub(pn);
    let mut u = src.uniform();
    // Smallest k in [1, n) with U >= q^k, or n when there is none.
    let (mut lo, mut hi) = (1u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if less_than_power(&mut u, &qn, pd, mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Bounded geometric in expected O(1) coin flips.
pub fn bgeo(src: &mut RandomSource, p: &Rational, n: u64) -> Result<u64> {
    let (pn, pd) = check_open_unit(p)?;
    check_count(n)?;
    Ok(bgeo_raw(src, &pn, &pd, n))
}

/// Trials are scanned in blocks of `L = 2^s` with `L p` in `(1/4, 1/2]`.
///
/// One coin of bias `(1 - p)^L` skips a whole block of failures; otherwise
/// the first success inside the block is found by proposing a uniform offset
/// `m` and accepting it with probability `(1 - p)^m`.
pub fn bgeo_raw(src: &mut RandomSource, pn: &Nat, pd: &Nat, n: u64) -> u64 {
    let qn = pd.sub(pn);
    BoundedGeo::new(pn, &qn, pd).sample(src, n)
}

/// B-Geo sampling for one fixed `p`, with the per-`p` work done once.
///
/// `qn` must be `pd - pn`.
pub(crate) struct BoundedGeo<'a> {
    coin: PowerCoin<'a>,
    /// `None` when `p >= 1/4`, where trials are flipped one by one.
    block: Option<Block>,
}

struct Block {
    len: u64,
    bounds: (u128, u128),
    /// In-block proposals so far; the power table pays off after a few.
    proposals: Cell<u32>,
    powers: OnceCell<PowerTable>,
}

/// Bounds on `q^m` for `m < 256` as products of two table entries:
/// `q^(m mod 16)` and `q^(16 floor(m / 16))`.
struct PowerTable {
    low: [(u128, u128); 16],
    high: [(u128, u128); 16],
}

const TABLE_AFTER: u32 = 8;

impl PowerTable {
    fn new(coin: &PowerCoin<'_>) -> Self {
        let mut low = [(ONE_64, ONE_64); 16];
        for d in 1..16 {
            let (l, h) = low[d - 1];
            low[d] = (fix_mul64(l, coin.lo, false), fix_mul64(h, coin.hi, true));
        }
        let step = coin.bounds(16);
        let mut high = [(ONE_64, ONE_64); 16];
        for d in 1..16 {
            let (l, h) = high[d - 1];
            high[d] = (fix_mul64(l, step.0, false), fix_mul64(h, step.1, true));
        }
        PowerTable { low, high }
    }

    #[inline]
    fn bounds(&self, m: u64) -> (u128, u128) {
        let (a, b) = (self.low[(m & 15) as usize], self.high[(m >> 4) as usize]);
        (fix_mul64(a.0, b.0, false), fix_mul64(a.1, b.1, true))
    }
}

impl<'a> BoundedGeo<'a> {
    pub(crate) fn new(pn: &'a Nat, qn: &'a Nat, pd: &'a Nat) -> Self {
        debug_assert!(!pn.is_zero() && pn < pd);
        debug_assert_eq!(&pn.add(qn), pd);
        let coin = PowerCoin::new(qn, pd);
        let block = if pn.mul_u64(4) >= *pd {
            None
        } else {
            // Largest s with 2^s * 2p <= 1.
            let c = pd.bit_len() as i64 - pn.bit_len() as i64 - 1;
            let s = if pn.shl(1 + c.max(0) as u64) <= *pd { c } else { c - 1 };
            let len = 1u64 << s.clamp(0, 63);
            Some(Block { len, bounds: coin.bounds(len), proposals: Cell::new(0), powers: OnceCell::new() })
        };
        BoundedGeo { coin, block }
    }

    pub(crate) fn sample(&self, src: &mut RandomSource, n: u64) -> u64 {
        if n == 1 {
            return 1;
        }
        let trials = n - 1;
        let Some(block) = &self.block else {
            // A trial succeeds when U >= q.
            for t in 1..=trials {
                if !self.coin.sample(src, 1) {
                    return t;
                }
            }
            return n;
        };
        let mut done = 0u64;
        while done < trials {
            let len = block.len.min(trials - done);
            let skip = if len == block.len {
                self.coin.sample_with(src, len, block.bounds)
            } else {
                self.coin.sample(src, len)
            };
            if skip {
                done += len;
                continue;
            }
            loop {
                let m = src.below(len);
                if self.offset_coin(block, src, m) {
                    return done + m + 1;
                }
            }
        }
        n
    }

    /// `Ber(q^m)` for an in-block offset `m < len`.
    #[inline]
    fn offset_coin(&self, block: &Block, src: &mut RandomSource, m: u64) -> bool {
        if m == 0 {
            return true;
        }
        let table = match block.powers.get() {
            Some(t) => t,
            None if block.len <= 256 && block.proposals.get() >= TABLE_AFTER => {
                block.powers.get_or_init(|| PowerTable::new(&self.coin))
            }
            None => {
                block.proposals.set(block.proposals.get() + 1);
                return self.coin.sample(src, m);
            }
        };
        self.coin.sample_with(src, m, table.bounds(m))
    }
}

// ---------------------------------------------------------------------------
// Truncated geometric: Pr[i] = p (1-p)^(i-1) / (1 - (1-p)^n), i in [1, n]
// ---------------------------------------------------------------------------

pub fn tgeo(src: &mut RandomSource, p: &Rational, n: u64) -> Result<u64> {
    let (pn, pd) = check_open_unit(p)?;
    check_count(n)?;
    Ok(tgeo_raw(src, &pn, &pd, n))
}

#[inline]
pub fn tgeo_raw(src: &mut RandomSource, pn: &Nat, pd: &Nat, n: u64) -> u64 {
    tgeo_counted(src, pn, pd, n).0
}

/// T-Geo together with the number of proposals drawn (zero for the direct cases).
pub fn tgeo_counted(src: &mut RandomSource, pn: &Nat, pd: &Nat, n: u64) -> (u64, u64) {
    debug_assert!(!pn.is_zero() && pn < pd);
    match n {
        1 => (1, 0),
        2 => {
            // Pr[2] = (1 - p) / (2 - p)
            let second = ber_raw(src, &pd.sub(pn), &pd.shl(1).sub(pn));
            (1 + second as u64, 0)
        }
        _ if pn.mul_u64(n) >= *pd => {
            let mut rounds = 0;
            loop {
                rounds += 1;
                let i = bgeo_raw(src, pn, pd, n + 1);
                if i <= n {
                    return (i, rounds);
                }
            }
        }
        _ => {
            // A uniform proposal i passes Ber((1-p)^(i-1)) and Ber(1/(2p*))
            // with total probability exactly 1/2, and is then distributed as
            // T-Geo(p, n).
            let qn = pd.sub(pn);
            let coin = PowerCoin::new(&qn, pd);
            let half_inv = HalfInvPStar::from_raw(pn.clone(), pd.clone(), n);
            let mut rounds = 0;
            loop {
                rounds += 1;
                let i = 1 + src.below(n);
                if coin.sample(src, i - 1) && ber_approx(src, &half_inv) {
                    return (i, rounds);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(a: u64, b: u64) -> Rational {
        Rational::ratio(a, b).unwrap()
    }

    fn within_band(count: u64, trials: u64, p: f64) -> bool {
        let band = 5.0 * (p * (1.0 - p) / trials as f64).sqrt();
        (count as f64 / trials as f64 - p).abs() <= band.max(1e-12)
    }

    /// Exact `p(1-p)^(i-1) / (1-(1-p)^n)` by direct rational evaluation.
    fn tgeo_pmf(p: &Rational, n: u64) -> Vec<Rational> {
        let q = Rational::one().sub(p);
        let z = Rational::one().sub(&q.pow(n));
        (1..=n).map(|i| p.mul(&q.pow(i - 1)).div(&z).unwrap()).collect()
    }

    /// Exact binomial expansion of `(1 - (1-q)^n) / (n q)`.
    fn pstar_oracle(q: &Rational, n: u64) -> Rational {
        let mut sum = Rational::zero();
        let mut binom = Rational::one();
        for j in 1..=n {
            binom = binom.mul(&r(n - j + 1, j));
            let term = binom.mul(&q.pow(j));
            sum = if j % 2 == 1 { sum.add(&term) } else { sum.sub(&term) };
        }
        sum.div(&q.mul(&Rational::from(n))).unwrap()
    }

    #[test]
    fn ber_rational_edges_and_frequency() {
        let mut src = RandomSource::new(1);
        assert!(ber_rational(&mut src, &r(3, 2)).is_err());
        assert!(ber_rational(&mut src, &Rational::ratio(-1, 2).unwrap()).is_err());
        for _ in 0..1000 {
            assert!(!ber_rational(&mut src, &Rational::zero()).unwrap());
            assert!(ber_rational(&mut src, &Rational::one()).unwrap());
        }
        let trials = 1_000_000;
        let hits = (0..trials).filter(|_| ber_rational(&mut src, &r(3, 7)).unwrap()).count();
        assert!(within_band(hits as u64, trials, 3.0 / 7.0));
    }

    #[test]
    fn pstar_examples() {
        assert_eq!(pstar_exact(&r(1, 2), 2).unwrap(), r(3, 4));
        assert_eq!(pstar_exact(&r(1, 7), 1).unwrap(), Rational::one());
        assert!(matches!(pstar_exact(&r(1, 2), 3), Err(Error::PreconditionViolation(_))));
        let a = pstar_approx(&r(1, 2), 2, 10).unwrap();
        let err = a.value().sub(&r(3, 4));
        assert!(err <= r(1, 1024) && err.neg() <= r(1, 1024));
        for i in 1..20 {
            assert_eq!(pstar_approx(&r(1, 9), 1, i).unwrap().value(), Rational::one());
        }
    }

    #[test]
    fn half_inv_pstar_exact_value() {
        let h = HalfInvPStar::new(&r(1, 2), 2).unwrap();
        assert_eq!(h.exact(), r(2, 3));
        let one = HalfInvPStar::new(&r(1, 5), 1).unwrap();
        assert_eq!(one.exact(), r(1, 2));
    }

    #[test]
    fn literal_scan_variant_is_biased() {
        // Scanning indices left to right, each firing with probability
        // pi_i = Pr[T-Geo = i], and returning the first that fires, does not
        // reproduce pi.
        let p = r(1, 100);
        let pi = tgeo_pmf(&p, 10);
        let mut survive = Rational::one();
        let mut first = Vec::new();
        for x in &pi {
            first.push(survive.mul(x));
            survive = survive.mul(&Rational::one().sub(x));
        }
        let total = Rational::one().sub(&survive);
        let law0 = first[0].div(&total).unwrap();
        assert!(law0.sub(&pi[0]) > r(1, 20));
    }

    #[test]
    fn power_coin_exact_fallback_agrees() {
        // Compare the interval path against exact powers with a shared U.
        let mut src = RandomSource::new(77);
        for k in [0u64, 1, 2, 3, 17, 1000, 4099] {
            for _ in 0..100 {
                let mut probe = src.clone();
                let qn = Nat::from_u64(999_983);
                let qd = Nat::from_u64(1_000_003);
                let fast = less_than_power(&mut src.uniform(), &qn, &qd, k);
                let mut u = probe.uniform();
                let slow = u.less_than_ratio(&qn.pow(k), &qd.pow(k));
                assert_eq!(fast, slow, "k = {k}");
            }
        }
    }

    #[test]
    fn bgeo_small_cases() {
        let mut src = RandomSource::new(5);
        assert!(bgeo(&mut src, &Rational::one(), 3).is_err());
        assert!(bgeo(&mut src, &Rational::zero(), 3).is_err());
        assert!(bgeo(&mut src, &r(1, 2), 0).is_err());
        for _ in 0..100 {
            assert_eq!(bgeo(&mut src, &r(1, 3), 1).unwrap(), 1);
            assert_eq!(bgeo_reference(&mut src, &r(1, 3), 1).unwrap(), 1);
            assert_eq!(tgeo(&mut src, &r(1, 3), 1).unwrap(), 1);
        }
        let trials = 1_000_000u64;
        for f in [bgeo, bgeo_reference] {
            let mut counts = [0u64; 4];
            for _ in 0..trials {
                counts[f(&mut src, &r(1, 2), 3).unwrap() as usize] += 1;
            }
            assert_eq!(counts[0], 0);
            assert!(within_band(counts[1], trials, 0.5));
            assert!(within_band(counts[2], trials, 0.25));
            assert!(within_band(counts[3], trials, 0.25));
        }
    }

    #[test]
    fn tgeo_case_one() {
        let mut src = RandomSource::new(8);
        let trials = 1_000_000u64;
        let ones = (0..trials).filter(|_| tgeo(&mut src, &r(1, 2), 2).unwrap() == 1).count();
        assert!(within_band(ones as u64, trials, 2.0 / 3.0));
    }

    #[test]
    fn tgeo_case_two_two_matches_pmf() {
        let mut src = RandomSource::new(9);
        let p = r(1, 100);
        let pmf = tgeo_pmf(&p, 10);
        let trials = 400_000u64;
        let mut counts = [0u64; 11];
        let mut proposals = 0;
        for _ in 0..trials {
            let (i, rounds) = tgeo_counted(&mut src, &Nat::from_u64(1), &Nat::from_u64(100), 10);
            counts[i as usize] += 1;
            proposals += rounds;
        }
        for i in 1..=10 {
            assert!(within_band(counts[i], trials, pmf[i - 1].to_f64()), "i = {i}");
        }
        assert!((proposals as f64 / trials as f64) < 4.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn pstar_exact_matches_binomial_oracle(a in 1u64..1000, n in 1u64..40, extra in 0u64..1000) {
            let q = r(a, a * n + extra);
            prop_assert_eq!(pstar_exact(&q, n).unwrap(), pstar_oracle(&q, n));
        }

        #[test]
        fn pstar_approx_within_bound(a in 1u64..1000, n in 1u64..=64, extra in 0u64..1000, i in 1u32..=48) {
            let q = r(a, a * n + extra);
            let exact = pstar_exact(&q, n).unwrap();
            let approx = pstar_approx(&q, n, i).unwrap();
            let err = approx.value().sub(&exact);
            let bound = Rational::dyadic(MultiWordInt::one(), i as u64);
            prop_assert!(err <= bound && err.neg() <= bound);
            prop_assert!(approx.frac_bits <= i as u64 + 1);

            let h = HalfInvPStar::new(&q, n).unwrap();
            let herr = h.approx(i).value().sub(&h.exact());
            prop_assert!(herr <= bound && herr.neg() <= bound);
        }

        #[test]
        fn word_approximations_match_exact_ones(a in 1u64..1_000_000, n in 1u64..5000, extra in 0u64..1_000_000, i in 1u32..=64) {
            let q = r(a, a * n + extra);
            let p = PStar::new(&q, n).unwrap();
            if let Some((m, f)) = p.approx_word(i) {
                let d = p.approx(i);
                prop_assert_eq!((Nat::from(m), f), (d.mantissa.magnitude().clone(), d.frac_bits));
            }
            let h = HalfInvPStar::new(&q, n).unwrap();
            if let Some((m, f)) = h.approx_word(i) {
                let d = h.approx(i);
                prop_assert_eq!((Nat::from(m), f), (d.mantissa.magnitude().clone(), d.frac_bits));
            }
        }

        #[test]
        fn scaled_coin_matches_exact_coin(
            num in 1u128..u128::MAX, den in 1u64.., extra in 0u32..80, s in 1u32..=100, w in any::<u128>(), seed in any::<u64>()
        ) {
            let num = Nat::from_u128(num).shl(extra as u64);
            let den = Nat::from_u64(den);
            let w = if s >= 128 { w } else { w >> (128 - s) };
            if let Some(coin) = ScaledCoin::new(&num, &den, s) {
                let (mut a, mut b) = (RandomSource::new(seed), RandomSource::new(seed));
                for _ in 0..20 {
                    prop_assert_eq!(coin.sample(&mut a, w), ber_raw(&mut b, &den.mul_u128(w), &num));
                }
                prop_assert_eq!(a.random_word(), b.random_word());
            }
        }

        #[test]
        fn narrow_scaled_coin_matches_exact_coin(
            den in 1u64.., a in (1u64 << 19)..(1 << 22), j in 0u64..4, s in 1u32..=64, w in any::<u64>(), seed in any::<u64>()
        ) {
            // 2^s / W is about 2^20 / a, between 1/4 and 2.
            let den = Nat::from_u64(den);
            let num = den.mul_u64(a).shl(s as u64).shr(20).add_u64(j);
            let w = (w >> (64 - s)) as u128;
            let coin = ScaledCoin::new(&num, &den, s).unwrap();
            let (mut x, mut y) = (RandomSource::new(seed), RandomSource::new(seed));
            for _ in 0..20 {
                prop_assert_eq!(coin.sample(&mut x, w), ber_raw(&mut y, &den.mul_u128(w), &num));
            }
            prop_assert_eq!(x.random_word(), y.random_word());
        }

        #[test]
        fn word_powers_match_bignum(x in 0u128..=1 << 64, k in 0u64..1 << 20, up in any::<bool>()) {
            let y = fix_pow(&Nat::from_u128(x), k, 64, up);
            prop_assert_eq!(Nat::from_u128(fix_pow64(x, k, up)), y);
            let z = Nat::from_u128(x).mul(&Nat::from_u128(x)).add(&Nat::from_u64(if up { u64::MAX } else { 0 })).shr(64);
            prop_assert_eq!(Nat::from_u128(fix_mul64(x, x, up)), z);
        }

        #[test]
        fn tabled_offset_coin_matches_exact_power(pn in 1u64..1 << 16, ratio in 4u64..1024, j in 1u64..1000, seed in any::<u64>()) {
            // p < 1/4, so blocks are in use; blocks reach 512 trials.
            let (pn, pd) = (Nat::from_u64(pn), Nat::from_u64(ratio * pn + j));
            let qn = pd.sub(&pn);
            let g = BoundedGeo::new(&pn, &qn, &pd);
            let block = g.block.as_ref().unwrap();
            let mut x = RandomSource::new(seed);
            for i in 0..2 * TABLE_AFTER {
                let m = x.below(block.len);
                let mut y = x.clone();
                let exact = y.uniform().less_than_ratio(&qn.pow(m), &pd.pow(m));
                prop_assert_eq!(g.offset_coin(block, &mut x, m), exact, "proposal {}", i);
                if i == TABLE_AFTER - 1 && block.len <= 256 {
                    // From here on the table path is taken.
                    block.proposals.set(TABLE_AFTER);
                }
            }
            if block.len > 1 {
                g.offset_coin(block, &mut x, block.len - 1);
            }
            prop_assert_eq!(block.powers.get().is_some(), block.len <= 256 && block.len > 1);
        }

        #[test]
        fn mul_shr_matches_bignum(a in any::<u128>(), b in any::<u128>(), s in 0u32..=200) {
            let p = Nat::from_u128(a).mul(&Nat::from_u128(b));
            let floor = p.shr(s as u64);
            let ceil = p.add(&Nat::pow2(s as u64).sub(&Nat::one())).shr(s as u64);
            let sat = |v: Nat| v.to_u128().unwrap_or(u128::MAX);
            prop_assert_eq!(mul_shr(a, b, s.min(255), false), sat(floor));
            prop_assert_eq!(mul_shr(a, b, s.min(255), true), sat(ceil));
        }

        #[test]
        fn word_dyadic_coin_matches_lazy_one(m in any::<u128>(), cut in 0u32..=128, shift in 0u32..=128, seed in any::<u64>()) {
            let m = if cut == 128 { m } else { m >> cut };
            let (mut a, mut b) = (RandomSource::new(seed), RandomSource::new(seed));
            for _ in 0..10 {
                prop_assert_eq!(a.below_dyadic(m, shift), b.uniform().less_than_dyadic(&Nat::from_u128(m), shift as u64));
            }
            prop_assert_eq!(a.random_word(), b.random_word());
        }

        #[test]
        fn geometric_ranges(a in 1u64..100, extra in 1u64..1000, n in 1u64..200, seed in any::<u64>()) {
            let p = r(a, a + extra);
            let mut src = RandomSource::new(seed);
            for _ in 0..20 {
                let b = bgeo(&mut src, &p, n).unwrap();
                prop_assert!((1..=n).contains(&b));
                let b = bgeo_reference(&mut src, &p, n).unwrap();
                prop_assert!((1..=n).contains(&b));
                let t = tgeo(&mut src, &p, n).unwrap();
                prop_assert!((1..=n).contains(&t));
            }
        }
    }
}
