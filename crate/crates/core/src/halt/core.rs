//! The three-level hierarchy itself, without rebuild policy.

use std::collections::HashMap;
use std::sync::Arc;

use rustc_hash::FxBuildHasher;
use smallvec::SmallVec;

use super::table::{fitting_slots, slot_numerator, table_m, LookupTable};
use crate::arith::Nat;
use crate::bg::{bucket_of, candidate_direct, extract, next_level_weight, pow2_log, BgStructure, SkipRate, BUCKETS};
use crate::error::{invalid, Error, Result};
use crate::item::{Item, QueryParams, TotalWeight};
use crate::random::RandomSource;
use crate::samplers::ber_raw;

/// Deterministic hashing so that runs with a fixed seed are reproducible.
pub(crate) type IdMap<V> = HashMap<u64, V, FxBuildHasher>;

#[cfg(test)]
thread_local! {
    pub(crate) static TABLE_DRAWS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Locator bucket tag for zero-weight items.
pub(crate) const ZERO_BUCKET: u8 = u8::MAX;

/// Width of an adapter's count window.
pub const ADAPTER_WIDTH: usize = 16;

/// Size-derived parameters of one build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HaltParams {
    pub n0: usize,
    pub log_n1: u32,
    pub log_n2: u32,
    pub log_n3: u32,
    pub m: u32,
    pub slots: usize,
}

impl HaltParams {
    pub fn for_size(n0: usize, budget_words_per_item: u64) -> Self {
        let log_n1 = pow2_log(2 * n0.max(1));
        let log_n2 = pow2_log(log_n1 as usize);
        let log_n3 = pow2_log(log_n2 as usize);
        let m = table_m(n0);
        let budget_bits = budget_words_per_item as u128 * n0.max(1) as u128 * 64;
        HaltParams { n0, log_n1, log_n2, log_n3, m, slots: fitting_slots(m, budget_bits) }
    }

    /// Upper bound on `l2 - l1 + 1` for every adapter.
    pub fn adapter_range_bound(&self) -> usize {
        2 * self.m as usize + 1
    }
}

/// Counts of a final-level structure's buckets over the only window that can
/// be non-empty.
#[derive(Clone, Debug)]
pub struct Adapter {
    l1: usize,
    l2: usize,
    counts: [u8; ADAPTER_WIDTH],
}

impl Adapter {
    fn new(l1: usize, l2: usize) -> Self {
        assert!(l2 + 1 - l1 <= ADAPTER_WIDTH, "adapter window [{l1}, {l2}] too wide");
        Adapter { l1, l2, counts: [0; ADAPTER_WIDTH] }
    }

    #[inline]
    pub fn count(&self, b: i64) -> u8 {
        if b < self.l1 as i64 || b > self.l2 as i64 {
            0
        } else {
            self.counts[b as usize - self.l1]
        }
    }

    fn set(&mut self, b: usize, count: usize) {
        assert!((self.l1..=self.l2).contains(&b), "bucket {b} outside adapter window [{}, {}]", self.l1, self.l2);
        self.counts[b - self.l1] = count as u8;
    }

    pub fn window(&self) -> (usize, usize) {
        (self.l1, self.l2)
    }
}

/// A bucket-grouping structure whose items are the non-empty buckets of the
/// level below, keyed by bucket index.
#[derive(Clone, Debug)]
struct Layer {
    bg: BgStructure<u8, u128>,
    pos: [u8; BUCKETS],
}

type Changes = SmallVec<[(usize, usize, usize); 2]>;

impl Layer {
    fn new(log_n: u32) -> Self {
        Layer { bg: BgStructure::new(log_n), pos: [0; BUCKETS] }
    }

    /// Re-weights the item for lower bucket `key` whose size went from `old`
    /// to `new`. Returns `(bucket, old_len, new_len)` for every bucket of
    /// this layer whose size changed.
    fn update(&mut self, key: usize, old: usize, new: usize) -> Changes {
        let mut changes = Changes::new();
        if old > 0 {
            let b = bucket_of(next_level_weight(key, old));
            let pos = self.pos[key] as usize;
            let before = self.bg.bucket(b).len();
            let (_, moved) = self.bg.remove_at(b, pos);
            if let Some(mk) = moved {
                self.pos[mk as usize] = pos as u8;
            }
            changes.push((b, before, before - 1));
        }
        if new > 0 {
            let (b, pos) = self.bg.insert_positive(key as u8, next_level_weight(key, new));
            self.pos[key] = pos as u8;
            match changes.last_mut() {
                Some(last) if last.0 == b => last.2 += 1,
                _ => changes.push((b, pos, pos + 1)),
            }
        }
        changes.retain(|c| c.1 != c.2);
        changes
    }

    /// Checks that this layer holds exactly `expected` (key, weight) items.
    fn audit(&self, expected: &[(usize, u128)], what: &str) -> Result<()> {
        self.bg.audit()?;
        if self.bg.len() != expected.len() {
            return Err(Error::InvalidState(format!("{what}: {} items, expected {}", self.bg.len(), expected.len())));
        }
        for &(key, w) in expected {
            let b = bucket_of(w);
            let entry = self.bg.bucket(b).get(self.pos[key] as usize);
            if entry != Some(&(key as u8, w)) {
                return Err(Error::InvalidState(format!(
                    "{what}: item for bucket {key} with weight {w} not at its recorded position"
                )));
            }
        }
        Ok(())
    }

    fn heap_bytes(&self) -> usize {
        self.bg.heap_bytes()
    }
}

#[derive(Clone, Debug)]
struct FinalLevel {
    layer: Layer,
    adapter: Adapter,
}

#[derive(Clone, Debug)]
struct Level2 {
    layer: Layer,
    finals: Vec<Option<FinalLevel>>,
}

impl Level2 {
    fn new(p: &HaltParams) -> Self {
        let groups = BUCKETS / p.log_n2 as usize + 1;
        Level2 { layer: Layer::new(p.log_n2), finals: vec![None; groups] }
    }

    fn bucket_changed(&mut self, p: &HaltParams, b2: usize, old: usize, new: usize) {
        let l2 = p.log_n2 as usize;
        let g = b2 / l2;
        let f = self.finals[g].get_or_insert_with(|| {
            // Level-3 items for level-2 bucket i weigh 2^(i+1) c with
            // 1 <= c <= log_n1, so their buckets lie in this window.
            let lo = g * l2 + 1;
            let hi = (g + 1) * l2 + p.log_n1.ilog2() as usize;
            FinalLevel { layer: Layer::new(p.log_n3), adapter: Adapter::new(lo, hi) }
        });
        for (b3, _, n) in f.layer.update(b2, old, new) {
            f.adapter.set(b3, n);
        }
        if f.layer.bg.is_empty() {
            self.finals[g] = None;
        }
    }
}

/// Per-query values shared by every final-level instance.
struct FinalCtx {
    /// `floor(log2(W / m^2))`.
    i1: i64,
    /// `2^i1 m^2 / W` as a numerator/denominator pair.
    ratio_num: Nat,
    ratio_den: Nat,
}

impl FinalCtx {
    fn new(w: &TotalWeight, m: u32) -> Self {
        let m2 = m as u64 * m as u64;
        let i1 = w.floor_log2_div(m2);
        let base = w.den.mul_u64(m2);
        let (ratio_num, ratio_den) =
            if i1 >= 0 { (base.shl(i1 as u64), w.num.clone()) } else { (base, w.num.shl(i1.unsigned_abs())) };
        assert!(ratio_num <= ratio_den && ratio_num.shl(1) > ratio_den, "final-level acceptance ratio outside (1/2, 1]");
        FinalCtx { i1, ratio_num, ratio_den }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct HaltCore {
    pub(crate) params: HaltParams,
    pub(crate) level1: BgStructure<u64, u64>,
    pub(crate) locator: IdMap<(u8, u32)>,
    pub(crate) zero: Vec<u64>,
    level2: Vec<Option<Level2>>,
    pub(crate) table: Arc<LookupTable>,
}

impl HaltCore {
    pub(crate) fn empty(params: HaltParams, table: Arc<LookupTable>) -> Self {
        let mut locator = IdMap::default();
        locator.reserve(params.n0 + params.n0 / 2 + 1);
        HaltCore {
            params,
            level1: BgStructure::new(params.log_n1),
            locator,
            zero: Vec::new(),
            level2: vec![None; BUCKETS / params.log_n1 as usize + 1],
            table,
        }
    }

    pub(crate) fn build_table(params: &HaltParams) -> Arc<LookupTable> {
        Arc::new(LookupTable::build(params.slots, params.m).expect("slot count chosen within budget"))
    }

    pub(crate) fn build(items: &[Item], budget_words_per_item: u64) -> Result<Self> {
        let params = HaltParams::for_size(items.len(), budget_words_per_item);
        HaltCore::from_items(params, Self::build_table(&params), items)
    }

    /// Bulk construction: bucket everything, propagate each final bucket
    /// size once, then index the ids.
    pub(crate) fn from_items(params: HaltParams, table: Arc<LookupTable>, items: &[Item]) -> Result<Self> {
        let mut core = HaltCore::empty(params, table);
        let mut counts = [0usize; BUCKETS];
        let mut zeros = 0;
        for it in items {
            if it.weight == 0 {
                zeros += 1;
            } else {
                counts[bucket_of(it.weight as u128)] += 1;
            }
        }
        for (b, &c) in counts.iter().enumerate() {
            core.level1.reserve_bucket(b, c);
        }
        core.zero.reserve(zeros);
        for it in items {
            if it.weight == 0 {
                core.zero.push(it.id);
            } else {
                core.level1.insert_positive(it.id, it.weight);
            }
        }
        let filled: Vec<usize> = core.level1.nonempty_buckets().iter().collect();
        for &b in &filled {
            core.level1_changed(b, 0, core.level1.bucket(b).len());
        }
        let duplicate = |id: u64| invalid(format!("item {id} already present"));
        for &b in &filled {
            for (pos, &(id, _)) in core.level1.bucket(b).iter().enumerate() {
                if core.locator.insert(id, (b as u8, pos as u32)).is_some() {
                    return Err(duplicate(id));
                }
            }
        }
        for (pos, &id) in core.zero.iter().enumerate() {
            if core.locator.insert(id, (ZERO_BUCKET, pos as u32)).is_some() {
                return Err(duplicate(id));
            }
        }
        Ok(core)
    }

    #[inline]
    pub(crate) fn len(&self) -> usize {
        self.level1.len() + self.zero.len()
    }

    pub(crate) fn contains(&self, id: u64) -> bool {
        self.locator.contains_key(&id)
    }

    pub(crate) fn weight(&self, id: u64) -> Option<u64> {
        let &(b, pos) = self.locator.get(&id)?;
        Some(if b == ZERO_BUCKET { 0 } else { self.level1.bucket(b as usize)[pos as usize].1 })
    }

    pub(crate) fn insert(&mut self, id: u64, w: u64) -> Result<()> {
        if self.locator.contains_key(&id) {
            return Err(invalid(format!("item {id} already present")));
        }
        if w == 0 {
            self.zero.push(id);
            self.locator.insert(id, (ZERO_BUCKET, (self.zero.len() - 1) as u32));
            return Ok(());
        }
        let (b, pos) = self.level1.insert_positive(id, w);
        self.locator.insert(id, (b as u8, pos as u32));
        self.level1_changed(b, pos, pos + 1);
        Ok(())
    }

    /// Removes `id`, returning its weight and the (bucket tag, position) it
    /// occupied before removal.
    pub(crate) fn delete(&mut self, id: u64) -> Result<(u64, (u8, usize))> {
        let (b, pos) = self.locator.remove(&id).ok_or_else(|| invalid(format!("item {id} not present")))?;
        let pos = pos as usize;
        if b == ZERO_BUCKET {
            self.zero.swap_remove(pos);
            if let Some(&moved) = self.zero.get(pos) {
                self.locator.insert(moved, (ZERO_BUCKET, pos as u32));
            }
            return Ok((0, (b, pos)));
        }
        let before = self.level1.bucket(b as usize).len();
        let ((_, w), moved) = self.level1.remove_at(b as usize, pos);
        if let Some(mk) = moved {
            self.locator.insert(mk, (b, pos as u32));
        }
        self.level1_changed(b as usize, before, before - 1);
        Ok((w, (b, pos)))
    }

    fn level1_changed(&mut self, b1: usize, old: usize, new: usize) {
        let p = self.params;
        let j = b1 / p.log_n1 as usize;
        let l2 = self.level2[j].get_or_insert_with(|| Level2::new(&p));
        for (b2, o, n) in l2.layer.update(b1, old, new) {
            l2.bucket_changed(&p, b2, o, n);
        }
        if l2.layer.bg.is_empty() {
            self.level2[j] = None;
        }
    }

    /// Items in a deterministic order: buckets ascending, then zero weights.
    pub(crate) fn items(&self) -> Vec<Item> {
        let mut out = Vec::with_capacity(self.len());
        for b in self.level1.nonempty_buckets().iter() {
            out.extend(self.level1.bucket(b).iter().map(|&(id, w)| Item::new(id, w)));
        }
        out.extend(self.zero.iter().map(|&id| Item::new(id, 0)));
        out
    }

    pub(crate) fn query_into(
        &self,
        params: &QueryParams,
        src: &mut RandomSource,
        out: &mut Vec<u64>,
        use_table: bool,
    ) -> Result<()> {
        if self.len() == 0 {
            return Ok(());
        }
        let w = TotalWeight::from_params(params, self.level1.total())?;
        let mut ctx: Option<FinalCtx> = None;
        self.level1.query_with(&w, src, out, |l1, j, src, out| {
            let Some(l2) = self.level2[j].as_ref() else { return };
            let mut cand1: Vec<u8> = Vec::new();
            l2.layer.bg.query_with(&w, src, &mut cand1, |bg2, k, src, cand1| {
                let Some(f) = l2.finals[k].as_ref() else { return };
                let ctx = ctx.get_or_insert_with(|| FinalCtx::new(&w, self.params.m));
                let mut cand2: Vec<u8> = Vec::new();
                self.query_final(f, &w, ctx, src, &mut cand2, use_table);
                for b2 in cand2 {
                    extract(b2 as usize, bg2.bucket(b2 as usize), &w, src, cand1);
                }
            });
            for b1 in cand1 {
                extract(b1 as usize, l1.bucket(b1 as usize), &w, src, out);
            }
        });
        Ok(())
    }

    /// Samples the final-level items (level-2 bucket indices) of one instance.
    fn query_final(
        &self,
        f: &FinalLevel,
        w: &TotalWeight,
        ctx: &FinalCtx,
        src: &mut RandomSource,
        out: &mut Vec<u8>,
        use_table: bool,
    ) {
        let bg = &f.layer.bg;
        let i1 = ctx.i1;
        let i2 = w.ceil_log;
        if i1 >= 0 {
            bg.sample_insignificant(w, i1, SkipRate::Pow2OverW(i1 as u64 + 1), src, out);
        }
        bg.collect_certain(i2, out);
        let lo = (i1 + 1).max(0);
        let hi = (i2 - 1).min(BUCKETS as i64 - 1);
        if lo > hi {
            return;
        }
        let m = self.params.m as usize;
        let k = if use_table { self.table.slots() } else { 0 };
        if k > 0 {
            let mut row = 0usize;
            let mut scale = 1usize;
            for s in 1..=k {
                let b = i1 + s as i64;
                let c = if b <= hi { (f.adapter.count(b) as usize).min(m) } else { 0 };
                row += c * scale;
                scale *= m + 1;
            }
            if row != 0 {
                let r = self.table.sample_row(row, src);
                #[cfg(test)]
                TABLE_DRAWS.with(|c| c.set(c.get() + 1));
                for s in 1..=k {
                    if r >> (s - 1) & 1 == 0 {
                        continue;
                    }
                    let b = (i1 + s as i64) as usize;
                    let bucket = bg.bucket(b);
                    let items = &bucket[..bucket.len().min(m)];
                    // Slot probability over true candidate probability.
                    let accept = if slot_numerator(s, items.len() as u32, m as u32) == (m * m) as u64 {
                        candidate_direct(b, items.len(), w, src)
                    } else {
                        ber_raw(src, &ctx.ratio_num, &ctx.ratio_den)
                    };
                    if accept {
                        extract(b, items, w, src, out);
                    }
                }
            }
        }
        for b in bg.nonempty_buckets().range(lo as usize, hi as usize) {
            let s = (b as i64 - i1) as usize;
            let bucket = bg.bucket(b);
            let start = if s <= k { bucket.len().min(m) } else { 0 };
            for chunk in bucket[start..].chunks(m) {
                if candidate_direct(b, chunk.len(), w, src) {
                    extract(b, chunk, w, src, out);
                }
            }
        }
    }

    pub(crate) fn audit(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(Error::InvalidState(m));
        self.level1.audit()?;
        if self.level1.log_n() != p.log_n1 {
            return bad("level-1 padding changed since build".into());
        }
        if self.locator.len() != self.len() {
            return bad(format!("locator has {} entries for {} items", self.locator.len(), self.len()));
        }
        for b in self.level1.nonempty_buckets().iter() {
            for (pos, &(id, _)) in self.level1.bucket(b).iter().enumerate() {
                if self.locator.get(&id) != Some(&(b as u8, pos as u32)) {
                    return bad(format!("locator entry for item {id} is stale"));
                }
            }
        }
        for (pos, id) in self.zero.iter().enumerate() {
            if self.locator.get(id) != Some(&(ZERO_BUCKET, pos as u32)) {
                return bad(format!("locator entry for zero-weight item {id} is stale"));
            }
        }
        for (j, slot) in self.level2.iter().enumerate() {
            let ys: Vec<(usize, u128)> =
                if j < 128 { self.level1.next_level_items(j).collect() } else { Vec::new() };
            let Some(l2) = slot else {
                if !ys.is_empty() {
                    return bad(format!("level-1 group {j} has no level-2 structure"));
                }
                continue;
            };
            if ys.is_empty() {
                return bad(format!("level-2 structure kept for empty group {j}"));
            }
            l2.layer.audit(&ys, &format!("level 2 of group {j}"))?;
            for (k, fslot) in l2.finals.iter().enumerate() {
                let zs: Vec<(usize, u128)> = l2.layer.bg.next_level_items(k).collect();
                let Some(f) = fslot else {
                    if !zs.is_empty() {
                        return bad(format!("level-2 group {k} of group {j} has no final level"));
                    }
                    continue;
                };
                if zs.is_empty() {
                    return bad(format!("final level kept for empty level-2 group {k}"));
                }
                f.layer.audit(&zs, &format!("final level {k} of group {j}"))?;
                let (l1, l2w) = f.adapter.window();
                if l2w + 1 - l1 > p.adapter_range_bound() {
                    return bad(format!("adapter window [{l1}, {l2w}] exceeds {}", p.adapter_range_bound()));
                }
                for b in 0..BUCKETS {
                    let len = f.layer.bg.bucket(b).len();
                    if len > 0 && !(l1..=l2w).contains(&b) {
                        return bad(format!("final-level bucket {b} outside adapter window [{l1}, {l2w}]"));
                    }
                    if f.adapter.count(b as i64) as usize != len {
                        return bad(format!("adapter count for bucket {b} is stale"));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn heap_bytes(&self) -> usize {
        let locator = self.locator.capacity() * (std::mem::size_of::<(u64, (u8, u32))>() + 1);
        let mut total = self.level1.heap_bytes() + locator + self.zero.capacity() * 8 + self.table.heap_bytes();
        total += self.level2.capacity() * std::mem::size_of::<Option<Level2>>();
        for l2 in self.level2.iter().flatten() {
            total += l2.layer.heap_bytes() + l2.finals.capacity() * std::mem::size_of::<Option<FinalLevel>>();
            total += l2.finals.iter().flatten().map(|f| f.layer.heap_bytes()).sum::<usize>();
        }
        total
    }
}
