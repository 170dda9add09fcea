//! One level of bucket grouping.
//!
//! Items are bucketed by weight magnitude (`2^i <= w < 2^(i+1)` goes to bucket
//! `i`) and buckets are grouped in runs of `log2 N` consecutive indices. For a
//! query with parameterized total weight `W`, every group is classified as
//! insignificant (all inclusion probabilities at most `1/N^2`), certain (all
//! probabilities 1) or significant (the at most three groups in between).

use std::fmt::Debug;

use crate::arith::Nat;
use crate::error::{Error, Result};
use crate::item::{QueryParams, TotalWeight};
use crate::random::RandomSource;
use crate::samplers::{ber_approx, ber_raw, tgeo_raw, BoundedGeo, PStar, ScaledCoin};
use crate::sorted_set::BoundedIntSet;

/// Number of bucket indices; weights are below `2^128`.
pub const BUCKETS: usize = 128;

/// Integer weight stored alongside a key.
pub trait Weight: Copy + Into<u128> + Debug {}
impl Weight for u64 {}
impl Weight for u128 {}

#[inline]
pub fn bucket_of(w: u128) -> usize {
    debug_assert!(w > 0);
    127 - w.leading_zeros() as usize
}

/// `log2 N` for `N` the smallest power of 16 that is at least `max(count, 1)`.
pub fn pow16_log(count: usize) -> u32 {
    let mut log = 4;
    while log < 64 && (1u128 << log) < count as u128 {
        log += 4;
    }
    log
}

/// `log2 N` for `N` the smallest power of two that is at least `max(cap, 2)`.
pub fn pow2_log(cap: usize) -> u32 {
    let cap = cap.max(2) as u64;
    64 - (cap - 1).leading_zeros()
}

fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Group and bucket thresholds of one query at one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    /// Largest insignificant group index (`-1` if none).
    pub j1: i64,
    /// Smallest certain group index.
    pub j2: i64,
    /// Largest bucket index covered by insignificant groups.
    pub i1: i64,
    /// Smallest bucket index covered by certain groups.
    pub i2: i64,
}

/// Rate of the skip-sampling pass over the low buckets.
#[derive(Clone, Copy, Debug)]
pub(crate) enum SkipRate {
    /// `1 / N^2`.
    InvSquare,
    /// `min(1, 2^e / W)`.
    Pow2OverW(u64),
}

#[derive(Clone, Debug)]
pub struct BgStructure<K, Wt = u128> {
    log_n: u32,
    len: usize,
    total: u128,
    buckets: Vec<Vec<(K, Wt)>>,
    nonempty: BoundedIntSet,
    groups: BoundedIntSet,
    group_fill: [u8; BUCKETS],
}

impl<K: Copy + Debug, Wt: Weight> BgStructure<K, Wt> {
    pub fn new(log_n: u32) -> Self {
        assert!((1..64).contains(&log_n), "log2 N must be in [1, 63]");
        BgStructure {
            log_n,
            len: 0,
            total: 0,
            buckets: (0..BUCKETS).map(|_| Vec::new()).collect(),
            nonempty: BoundedIntSet::new(BUCKETS).expect("valid universe"),
            groups: BoundedIntSet::new(BUCKETS).expect("valid universe"),
            group_fill: [0; BUCKETS],
        }
    }

    /// Builds with `N` the item count padded to a power of 16.
    pub fn build(items: impl IntoIterator<Item = (K, Wt)>) -> Result<Self> {
        let items: Vec<(K, Wt)> = items.into_iter().collect();
        let log_n = pow16_log(items.len());
        Self::build_with_log_n(items, log_n)
    }

    /// Builds with an explicit `log2 N`; `N` must bound the item count.
    pub fn build_with_log_n(items: impl IntoIterator<Item = (K, Wt)>, log_n: u32) -> Result<Self> {
        let mut s = BgStructure::new(log_n);
        for (key, w) in items {
            s.insert(key, w)?;
        }
        Ok(s)
    }

    #[inline]
    pub fn log_n(&self) -> u32 {
        self.log_n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sum of all weights.
    #[inline]
    pub fn total(&self) -> u128 {
        self.total
    }

    #[inline]
    pub fn group_of(&self, bucket: usize) -> usize {
        bucket / self.log_n as usize
    }

    #[inline]
    pub fn bucket(&self, b: usize) -> &[(K, Wt)] {
        &self.buckets[b]
    }

    pub fn nonempty_buckets(&self) -> &BoundedIntSet {
        &self.nonempty
    }

    pub fn nonempty_groups(&self) -> &BoundedIntSet {
        &self.groups
    }

    /// Buckets of group `j` with their next-level weights `2^(i+1) |B(i)|`.
    pub fn next_level_items(&self, j: usize) -> impl Iterator<Item = (usize, u128)> + '_ {
        let l = self.log_n as usize;
        let hi = ((j + 1) * l - 1).min(BUCKETS - 1);
        self.nonempty.range(j * l, hi).map(move |b| (b, next_level_weight(b, self.buckets[b].len())))
    }

    /// Inserts an item with positive weight, returning its bucket and position.
    pub fn insert(&mut self, key: K, w: Wt) -> Result<(usize, usize)> {
        if w.into() == 0 {
            return Err(Error::PreconditionViolation("bucketed weights must be positive".into()));
        }
        Ok(self.insert_positive(key, w))
    }

    pub(crate) fn reserve_bucket(&mut self, b: usize, additional: usize) {
        self.buckets[b].reserve_exact(additional);
    }

    pub(crate) fn insert_positive(&mut self, key: K, w: Wt) -> (usize, usize) {
        let wv: u128 = w.into();
        let b = bucket_of(wv);
        let bucket = &mut self.buckets[b];
        bucket.push((key, w));
        let pos = bucket.len() - 1;
        if pos == 0 {
            self.nonempty.insert(b).expect("bucket was empty");
            let g = self.group_of(b);
            if self.group_fill[g] == 0 {
                self.groups.insert(g).expect("group was empty");
            }
            self.group_fill[g] += 1;
        }
        self.len += 1;
        self.total += wv;
        (b, pos)
    }

    /// Swap-removes position `pos` of bucket `b`. Returns the removed entry
    /// and the key that moved into `pos`, if any.
    pub fn remove_at(&mut self, b: usize, pos: usize) -> ((K, Wt), Option<K>) {
        let bucket = &mut self.buckets[b];
        let removed = bucket.swap_remove(pos);
        let moved = bucket.get(pos).map(|e| e.0);
        if bucket.is_empty() {
            self.nonempty.delete(b).expect("bucket was non-empty");
            let g = self.group_of(b);
            self.group_fill[g] -= 1;
            if self.group_fill[g] == 0 {
                self.groups.delete(g).expect("group was non-empty");
            }
        }
        self.len -= 1;
        self.total -= removed.1.into();
        (removed, moved)
    }

    pub fn classify(&self, w: &TotalWeight) -> Classification {
        classify(self.log_n, w)
    }

    /// Standalone query: significant groups are resolved bucket by bucket.
    pub fn query(&self, params: &QueryParams, src: &mut RandomSource) -> Result<Vec<K>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let w = TotalWeight::from_params(params, self.total)?;
        let mut out = Vec::new();
        self.query_weight(&w, src, &mut out);
        Ok(out)
    }

    /// Samples every item independently with probability `min(1, w / W)`.
    pub fn query_weight(&self, w: &TotalWeight, src: &mut RandomSource, out: &mut Vec<K>) {
        self.query_with(w, src, out, |s, j, src, out| s.query_group_direct(j, w, src, out));
    }

    pub(crate) fn query_with<F>(&self, w: &TotalWeight, src: &mut RandomSource, out: &mut Vec<K>, mut significant: F)
    where
        F: FnMut(&Self, usize, &mut RandomSource, &mut Vec<K>),
    {
        let c = self.classify(w);
        self.sample_insignificant(w, c.i1, SkipRate::InvSquare, src, out);
        self.collect_certain(c.i2, out);
        for j in (c.j1 + 1)..c.j2 {
            if self.groups.contains(j as usize) {
                significant(self, j as usize, src, out);
            }
        }
    }

    /// Significant group via an exact per-bucket candidate coin.
    pub(crate) fn query_group_direct(&self, j: usize, w: &TotalWeight, src: &mut RandomSource, out: &mut Vec<K>) {
        let buckets: Vec<usize> = self.next_level_items(j).map(|(b, _)| b).collect();
        for b in buckets {
            let items = &self.buckets[b];
            if candidate_direct(b, items.len(), w, src) {
                extract(b, items, w, src, out);
            }
        }
    }

    /// Skip-sampling over all items in buckets `<= i1`, with a rate that
    /// bounds each of their inclusion probabilities.
    pub(crate) fn sample_insignificant(
        &self,
        w: &TotalWeight,
        i1: i64,
        rate: SkipRate,
        src: &mut RandomSource,
        out: &mut Vec<K>,
    ) {
        let Some(lowest) = self.nonempty.min() else { return };
        if i1 < lowest as i64 {
            return;
        }
        let i1 = (i1 as usize).min(BUCKETS - 1);
        let n = 1u64 << self.log_n;
        debug_assert!(self.len as u64 <= n, "padded size must bound the item count");
        let (pn, pd) = match rate {
            SkipRate::InvSquare => (Nat::one(), Nat::pow2(2 * self.log_n as u64)),
            SkipRate::Pow2OverW(e) => (w.den.shl(e), w.num.clone()),
        };
        let direct = ScaledCoin::new(&w.num, &w.den, i1 as u32 + 1);
        let flip = |src: &mut RandomSource, wt: u128| match &direct {
            Some(c) => c.sample(src, wt),
            None => ber_raw(src, &w.den.mul_u128(wt), &w.num),
        };
        if pn >= pd {
            // Rate 1: every item is simply flipped.
            for b in self.nonempty.range(0, i1) {
                for &(key, wt) in &self.buckets[b] {
                    if flip(src, wt.into()) {
                        out.push(key);
                    }
                }
            }
            return;
        }
        let qn = pd.sub(&pn);
        let k = BoundedGeo::new(&pn, &qn, &pd).sample(src, n + 1);
        if k > n {
            return;
        }
        let mut pos = 0u64;
        for b in self.nonempty.range(0, i1) {
            let bucket = &self.buckets[b];
            if pos + (bucket.len() as u64) < k {
                pos += bucket.len() as u64;
                continue;
            }
            for &(key, wt) in bucket {
                pos += 1;
                let wt: u128 = wt.into();
                let hit = match pos.cmp(&k) {
                    std::cmp::Ordering::Less => continue,
                    // Potential item: accept with probability (w / W) / rate.
                    std::cmp::Ordering::Equal => match rate {
                        SkipRate::InvSquare => {
                            ber_raw(src, &w.den.mul_u128(wt).shl(2 * self.log_n as u64), &w.num)
                        }
                        SkipRate::Pow2OverW(e) if e <= 128 => src.below_dyadic(wt, e as u32),
                        SkipRate::Pow2OverW(e) => src.uniform().less_than_dyadic(&Nat::from_u128(wt), e),
                    },
                    std::cmp::Ordering::Greater => flip(src, wt),
                };
                if hit {
                    out.push(key);
                }
            }
        }
    }

    /// Every item in buckets `>= i2`.
    pub(crate) fn collect_certain(&self, i2: i64, out: &mut Vec<K>) {
        if i2 >= BUCKETS as i64 {
            return;
        }
        for b in self.nonempty.range(i2.max(0) as usize, BUCKETS - 1) {
            out.extend(self.buckets[b].iter().map(|e| e.0));
        }
    }

    /// Checks bucket ranges, bookkeeping sets, size and total weight.
    pub fn audit(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidState(format!("bucket grouping: {m}")));
        let mut len = 0;
        let mut total = 0u128;
        let mut fill = [0u8; BUCKETS];
        for (b, bucket) in self.buckets.iter().enumerate() {
            if bucket.is_empty() == self.nonempty.contains(b) {
                return bad(format!("non-empty set disagrees at bucket {b}"));
            }
            for &(_, wt) in bucket {
                let wt: u128 = wt.into();
                if wt == 0 || bucket_of(wt) != b {
                    return bad(format!("weight {wt} stored in bucket {b}"));
                }
                total += wt;
            }
            len += bucket.len();
            if !bucket.is_empty() {
                fill[self.group_of(b)] += 1;
            }
        }
        for (g, &f) in fill.iter().enumerate() {
            if (f > 0) != self.groups.contains(g) || f != self.group_fill[g] {
                return bad(format!("group {g} bookkeeping is stale"));
            }
        }
        if len != self.len || total != self.total {
            return bad("size or total weight is stale".into());
        }
        if len as u128 > 1u128 << self.log_n {
            return bad(format!("{len} items exceed padded size 2^{}", self.log_n));
        }
        self.nonempty.audit()?;
        self.groups.audit()
    }

    pub fn heap_bytes(&self) -> usize {
        let entry = std::mem::size_of::<(K, Wt)>();
        self.buckets.iter().map(|b| b.capacity() * entry).sum::<usize>()
            + self.buckets.capacity() * std::mem::size_of::<Vec<(K, Wt)>>()
            + self.nonempty.heap_bytes()
            + self.groups.heap_bytes()
    }
}

/// Weight of the next-level item that stands for a bucket.
#[inline]
pub fn next_level_weight(b: usize, count: usize) -> u128 {
    (count as u128) << (b + 1)
}

pub fn classify(log_n: u32, w: &TotalWeight) -> Classification {
    let l = log_n as i64;
    // Bucket i is insignificant iff 2^(i+1) / W <= 1 / N^2, i.e. i <= g - 1.
    let g = w.floor_log - 2 * l;
    // Bucket i is certain iff 2^i >= W, i.e. i >= ceil(log2 W).
    let c = w.ceil_log;
    let j1 = floor_div(g, l) - 1;
    let j2 = ceil_div(c, l);
    assert!(j2 - j1 - 1 <= 3, "more than three significant groups: j1 = {j1}, j2 = {j2}");
    let jmax = (BUCKETS as i64 - 1) / l;
    let j1 = j1.clamp(-1, jmax);
    let j2 = j2.clamp(0, jmax + 1);
    Classification { j1, j2, i1: (j1 + 1) * l - 1, i2: j2 * l }
}

/// Candidate coin `Ber(min(1, 2^(b+1) count / W))` for a whole bucket.
#[inline]
pub(crate) fn candidate_direct(b: usize, count: usize, w: &TotalWeight, src: &mut RandomSource) -> bool {
    ber_raw(src, &w.den.mul_u64(count as u64).shl(b as u64 + 1), &w.num)
}

/// Turns a candidate bucket into sampled items.
///
/// Items of bucket `b` are first made potential at rate `p = min(1, 2^(b+1) / W)`
/// and then accepted with probability `w / 2^(b+1)`. The candidate coin upstream
/// fired with probability `min(1, p n)`; the first potential position is drawn
/// so that, combined with that coin, every item ends up potential
/// independently at rate `p`.
pub(crate) fn extract<K: Copy, Wt: Weight>(
    b: usize,
    items: &[(K, Wt)],
    w: &TotalWeight,
    src: &mut RandomSource,
    out: &mut Vec<K>,
) {
    let n = items.len() as u64;
    if n == 0 {
        return;
    }
    if b as i64 >= w.ceil_log {
        out.extend(items.iter().map(|e| e.0));
        return;
    }
    let pn = w.den.shl(b as u64 + 1);
    if pn >= w.num {
        match ScaledCoin::new(&w.num, &w.den, b as u32 + 1) {
            Some(coin) => out.extend(items.iter().filter(|e| coin.sample(src, e.1.into())).map(|e| e.0)),
            None => out.extend(items.iter().filter(|e| ber_raw(src, &w.den.mul_u128(e.1.into()), &w.num)).map(|e| e.0)),
        }
        return;
    }
    let pd = &w.num;
    let qn = pd.sub(&pn);
    let geo = BoundedGeo::new(&pn, &qn, pd);
    let mut k = if pn.mul_u64(n) >= *pd {
        geo.sample(src, n + 1)
    } else {
        if !ber_approx(src, &PStar::from_raw(pn.clone(), pd.clone(), n)) {
            return;
        }
        tgeo_raw(src, &pn, pd, n)
    };
    while k <= n {
        let (key, wt) = items[(k - 1) as usize];
        let wt: u128 = wt.into();
        debug_assert!(wt >> b == 1, "item weight outside its bucket range");
        if src.below_dyadic(wt, b as u32 + 1) {
            out.push(key);
        }
        k += geo.sample(src, n + 1);
    }
}
