//! Sorting integers with a deletion-only subset sampler over weights `2^a`.
//!
//! [`ReferenceFloatDpss`] holds items with distinct exponents and samples each
//! with probability `2^a / W`, `W = sum 2^(a_i)`, without ever materializing
//! `W`: the exponents themselves are its sparse representation. Repeatedly
//! sampling, removing the largest sampled item and insertion-sorting it into
//! the output yields the exact descending order.

use std::collections::{BTreeMap, HashMap};

use crate::arith::Nat;
use crate::error::{invalid, Error, Result};
use crate::random::RandomSource;
use crate::samplers::bgeo_raw;

#[derive(Clone, Debug, Default)]
pub struct ReferenceFloatDpss {
    /// Exponent to id, iterated from the top.
    by_exponent: BTreeMap<u64, u64>,
    exponent_of: HashMap<u64, u64>,
}

impl ReferenceFloatDpss {
    /// Items are `(id, exponent)`; exponents and ids must be distinct.
    pub fn build(items: &[(u64, u64)]) -> Result<Self> {
        let mut d = ReferenceFloatDpss::default();
        for &(id, a) in items {
            if d.exponent_of.insert(id, a).is_some() {
                return Err(invalid(format!("duplicate id {id}")));
            }
            if d.by_exponent.insert(a, id).is_some() {
                return Err(invalid(format!("duplicate exponent {a}")));
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.by_exponent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_exponent.is_empty()
    }

    pub fn exponent(&self, id: u64) -> Option<u64> {
        self.exponent_of.get(&id).copied()
    }

    /// Removes `id` and returns its exponent.
    pub fn delete(&mut self, id: u64) -> Result<u64> {
        let a = self.exponent_of.remove(&id).ok_or_else(|| invalid(format!("unknown id {id}")))?;
        self.by_exponent.remove(&a);
        Ok(a)
    }

    /// Exponents in descending order.
    pub fn exponents(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_exponent.keys().rev().copied()
    }

    /// Number of items that get an individual coin per query:
    /// `2 ceil(log2 N) + 1`.
    pub fn exact_rank_count(&self) -> usize {
        let n = self.len() as u64;
        let lg = if n <= 1 { 0 } else { 64 - (n - 1).leading_zeros() as usize };
        2 * lg + 1
    }

    /// Samples every item independently with probability `2^a / W`.
    pub fn query(&self, src: &mut RandomSource) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        self.query_into(src, &mut out)?;
        Ok(out)
    }

    pub fn query_into(&self, src: &mut RandomSource, out: &mut Vec<u64>) -> Result<()> {
        let Some(&top) = self.by_exponent.keys().next_back() else {
            return Err(Error::InvalidState("query on an empty structure".into()));
        };
        let n = self.len() as u64;
        let r = self.exact_rank_count();
        let mut iter = self.by_exponent.iter().rev();
        for (&a, &id) in iter.by_ref().take(r) {
            if self.coin(src, 1, a, top) {
                out.push(id);
            }
        }
        let rest = n.saturating_sub(r as u64);
        if rest == 0 {
            return Ok(());
        }
        // Below rank r every probability is at most 2^-(r-1) <= 1/N^2.
        let (pn, pd) = (Nat::one(), Nat::from_u128(n as u128 * n as u128));
        let nn = n * n;
        let mut pos = 0u64;
        loop {
            let k = if pd > pn { bgeo_raw(src, &pn, &pd, rest - pos + 1) } else { 1 };
            if pos + k > rest {
                break;
            }
            let (&a, &id) = iter.nth(k as usize - 1).expect("position within the remaining items");
            pos += k;
            if self.coin(src, nn, a, top) {
                out.push(id);
            }
        }
        Ok(())
    }

    /// `Ber(c 2^a / W)` for `c 2^a <= W`, with `top` the largest exponent.
    ///
    /// With `V = W / 2^top` in `[1, 2)` the coin is `U V < c 2^(a - top)`.
    /// Leading zero bits of `U` account for the power of two; the rest is
    /// decided against `K`-bit truncations of `U` and `V`, doubling `K`.
    fn coin(&self, src: &mut RandomSource, c: u64, a: u64, top: u64) -> bool {
        debug_assert!(c > 0);
        let lc = 64 - c.leading_zeros() as u64;
        // target = c 2^(a - top) in [2^(a - top + lc - 1), 2^(a - top + lc)).
        let s = (top - a).saturating_sub(lc);
        if !leading_zeros(src, s) {
            return false;
        }
        // Now U' V < c 2^(a - top + s) = c / 2^lc' with lc' = top - a - s <= lc.
        let shift = top - a - s;
        debug_assert!(shift <= lc);
        let lowest = *self.by_exponent.keys().next().expect("non-empty");
        let mut u = src.uniform();
        let mut k = 64u64;
        loop {
            let ub = u.top_bits(k);
            let (vb, exact) = self.scaled_total(top, lowest, k);
            // Compare against c 2^(2k - shift).
            let target = Nat::from_u64(c).shl(2 * k - shift);
            if ub.mul(&vb) >= target {
                return false;
            }
            let hi_v = if exact { vb } else { vb.add_u64(1) };
            if ub.add_u64(1).mul(&hi_v) <= target {
                return true;
            }
            k *= 2;
        }
    }

    /// `floor(V 2^k)` from the exponents within `k` of the top, and whether
    /// it is exact.
    fn scaled_total(&self, top: u64, lowest: u64, k: u64) -> (Nat, bool) {
        let from = top.saturating_sub(k);
        let mut v = Nat::zero();
        for (&a, _) in self.by_exponent.range(from..=top) {
            v = v.add(&Nat::pow2(a + k - top));
        }
        (v, lowest >= from)
    }
}

/// Whether the first `s` bits of a fresh uniform are all zero.
fn leading_zeros(src: &mut RandomSource, mut s: u64) -> bool {
    while s >= 64 {
        if src.random_word() != 0 {
            return false;
        }
        s -= 64;
    }
    s == 0 || src.random_word() >> (64 - s) == 0
}

/// Counters collected while sorting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SortStats {
    pub n: u64,
    /// Extraction rounds (one per output element).
    pub iterations: u64,
    /// Queries issued, including empty ones.
    pub queries: u64,
    pub queries_sq: u64,
    /// Total sample size over all queries.
    pub sampled: u64,
    pub sampled_sq: u128,
    /// Adjacent swaps made by the insertion sort.
    pub swaps: u64,
}

impl SortStats {
    pub fn mean_queries_per_iteration(&self) -> f64 {
        self.queries as f64 / self.iterations.max(1) as f64
    }

    /// Standard error of [`mean_queries_per_iteration`](Self::mean_queries_per_iteration).
    pub fn queries_per_iteration_se(&self) -> f64 {
        standard_error(self.queries as f64, self.queries_sq as f64, self.iterations)
    }

    pub fn mean_sample_size(&self) -> f64 {
        self.sampled as f64 / self.queries.max(1) as f64
    }

    pub fn sample_size_se(&self) -> f64 {
        standard_error(self.sampled as f64, self.sampled_sq as f64, self.queries)
    }

    pub fn swaps_per_item(&self) -> f64 {
        self.swaps as f64 / self.n.max(1) as f64
    }
}

fn standard_error(sum: f64, sum_sq: f64, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Sorts distinct integers in descending order through repeated sampling.
pub fn sort_via_dpss(values: &[u64], src: &mut RandomSource) -> Result<(Vec<u64>, SortStats)> {
    let items: Vec<(u64, u64)> = values.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect();
    let mut d = ReferenceFloatDpss::build(&items)?;
    let mut stats = SortStats { n: values.len() as u64, ..SortStats::default() };
    let mut out: Vec<u64> = Vec::with_capacity(values.len());
    let mut sample = Vec::new();
    while !d.is_empty() {
        stats.iterations += 1;
        let mut tries = 0u64;
        loop {
            tries += 1;
            sample.clear();
            d.query_into(src, &mut sample)?;
            let t = sample.len() as u64;
            stats.sampled += t;
            stats.sampled_sq += (t * t) as u128;
            if t > 0 {
                break;
            }
        }
        stats.queries += tries;
        stats.queries_sq += tries * tries;
        let best = *sample.iter().max_by_key(|&&id| d.exponent(id).expect("sampled ids are live")).expect("non-empty sample");
        let a = d.delete(best)?;
        out.push(a);
        let mut j = out.len() - 1;
        while j > 0 && out[j - 1] < out[j] {
            out.swap(j - 1, j);
            stats.swaps += 1;
            j -= 1;
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::Rational;

    fn exact_probabilities(d: &ReferenceFloatDpss) -> Vec<(u64, Rational)> {
        let w = d.exponents().fold(Nat::zero(), |acc, a| acc.add(&Nat::pow2(a)));
        d.by_exponent.iter().map(|(&a, &id)| (id, Rational::from_nats(Nat::pow2(a), w.clone()).unwrap())).collect()
    }

    fn check_marginals(d: &ReferenceFloatDpss, trials: u32, seed: u64) {
        let mut src = RandomSource::new(seed);
        let mut counts: HashMap<u64, u32> = HashMap::new();
        for _ in 0..trials {
            for id in d.query(&mut src).unwrap() {
                *counts.entry(id).or_default() += 1;
            }
        }
        for (id, p) in exact_probabilities(d) {
            let p = p.to_f64();
            let obs = *counts.get(&id).unwrap_or(&0) as f64 / trials as f64;
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((obs - p).abs() <= 5.0 * sd + 1e-12, "id {id}: observed {obs}, expected {p}");
        }
    }

    #[test]
    fn single_item_always_sampled() {
        let d = ReferenceFloatDpss::build(&[(7, 30)]).unwrap();
        let mut src = RandomSource::new(1);
        for _ in 0..1000 {
            assert_eq!(d.query(&mut src).unwrap(), vec![7]);
        }
    }

    #[test]
    fn two_item_joint_law() {
        // Exponents {3, 2}: W = 12, p = (2/3, 1/3), independent.
        let d = ReferenceFloatDpss::build(&[(0, 3), (1, 2)]).unwrap();
        let mut src = RandomSource::new(2);
        let trials = 300_000;
        let mut joint = [0u32; 4];
        for _ in 0..trials {
            let m = d.query(&mut src).unwrap().iter().fold(0usize, |m, &id| m | 1 << id);
            joint[m] += 1;
        }
        let expected = [1.0 / 3.0 * 2.0 / 3.0, 2.0 / 3.0 * 2.0 / 3.0, 1.0 / 3.0 * 1.0 / 3.0, 2.0 / 9.0];
        for (c, p) in joint.iter().zip(expected) {
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((*c as f64 / trials as f64 - p).abs() <= 5.0 * sd, "{joint:?}");
        }
    }

    #[test]
    fn marginals_small_instances() {
        check_marginals(&ReferenceFloatDpss::build(&[(0, 0), (1, 1), (2, 2), (3, 5), (4, 6)]).unwrap(), 200_000, 3);
        // Sixteen items: ranks beyond 2 ceil(log2 16) + 1 = 9 go through the skip pass.
        let items: Vec<(u64, u64)> = (0..16).map(|i| (i, [0u64, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15][i as usize])).collect();
        let d = ReferenceFloatDpss::build(&items).unwrap();
        assert_eq!(d.exact_rank_count(), 9);
        check_marginals(&d, 300_000, 4);
        // Wide gaps exercise the leading-zero shortcut and long totals.
        check_marginals(&ReferenceFloatDpss::build(&[(0, 1000), (1, 999), (2, 0), (3, 500), (4, 998)]).unwrap(), 200_000, 5);
    }

    #[test]
    fn skip_pass_marginals_with_heavy_tail() {
        // Many low items make the skip pass fire often enough to measure:
        // dense exponents 0..40 with the top few removed keep W small.
        let items: Vec<(u64, u64)> = (0..40).map(|i| (i, i)).collect();
        let mut d = ReferenceFloatDpss::build(&items).unwrap();
        for id in [39, 38, 37] {
            d.delete(id).unwrap();
        }
        check_marginals(&d, 300_000, 6);
    }

    #[test]
    fn largest_item_sampled_at_least_half_the_time() {
        let mut src = RandomSource::new(7);
        let items: Vec<(u64, u64)> = (0..50).map(|i| (i, src.random_below(1 << 20).unwrap() * 50 + i)).collect();
        let d = ReferenceFloatDpss::build(&items).unwrap();
        let top_id = d.by_exponent.iter().next_back().map(|(_, &id)| id).unwrap();
        let trials = 100_000u32;
        let hits = (0..trials).filter(|_| d.query(&mut src).unwrap().contains(&top_id)).count() as f64;
        let sd = (0.25 / trials as f64).sqrt();
        assert!(hits / trials as f64 >= 0.5 - 5.0 * sd);
    }

    #[test]
    fn deletions() {
        let mut d = ReferenceFloatDpss::build(&[(1, 4), (2, 9), (3, 1)]).unwrap();
        assert_eq!(d.delete(2).unwrap(), 9);
        assert!(d.delete(2).is_err());
        let mut src = RandomSource::new(8);
        for _ in 0..1000 {
            assert!(!d.query(&mut src).unwrap().contains(&2));
        }
        check_marginals(&d, 100_000, 9);
        d.delete(1).unwrap();
        d.delete(3).unwrap();
        assert!(d.is_empty());
        assert!(matches!(d.query(&mut src), Err(Error::InvalidState(_))));
    }

    #[test]
    fn random_deletions_keep_exact_probabilities() {
        let mut src = RandomSource::new(10);
        let items: Vec<(u64, u64)> = (0..14).map(|i| (i, 3 * i + src.random_below(3).unwrap())).collect();
        let mut d = ReferenceFloatDpss::build(&items).unwrap();
        for round in 0..4 {
            let ids: Vec<u64> = d.exponent_of.keys().copied().collect();
            let mut sorted = ids.clone();
            sorted.sort();
            d.delete(sorted[src.random_below(sorted.len() as u64).unwrap() as usize]).unwrap();
            check_marginals(&d, 100_000, 20 + round);
        }
    }

    #[test]
    fn build_rejects_duplicates() {
        assert!(ReferenceFloatDpss::build(&[(1, 4), (1, 5)]).is_err());
        assert!(ReferenceFloatDpss::build(&[(1, 4), (2, 4)]).is_err());
        let mut src = RandomSource::new(1);
        assert!(matches!(sort_via_dpss(&[3, 3], &mut src), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sorts_small_example() {
        let mut src = RandomSource::new(11);
        let (out, stats) = sort_via_dpss(&[5, 1, 3], &mut src).unwrap();
        assert_eq!(out, vec![5, 3, 1]);
        assert_eq!(stats.iterations, 3);
        assert!(sort_via_dpss(&[], &mut src).unwrap().0.is_empty());
    }

    #[test]
    fn sorts_random_inputs_with_bounded_counters() {
        let mut src = RandomSource::new(12);
        let mut seen = std::collections::HashSet::new();
        let values: Vec<u64> = std::iter::from_fn(|| Some(src.random_word() >> 32)).filter(|v| seen.insert(*v)).take(3000).collect();
        let (out, stats) = sort_via_dpss(&values, &mut src).unwrap();
        let mut oracle = values.clone();
        oracle.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(out, oracle);
        assert!(stats.mean_queries_per_iteration() <= 2.0 + 5.0 * stats.queries_per_iteration_se());
        assert!((stats.mean_sample_size() - 1.0).abs() <= 5.0 * stats.sample_size_se());
        assert!(stats.swaps_per_item() <= 10.0);
    }

    #[test]
    fn sort_is_reproducible() {
        let values: Vec<u64> = (0..500).map(|i| i * 7919 % 100_003).collect();
        let a = sort_via_dpss(&values, &mut RandomSource::new(13)).unwrap();
        let b = sort_via_dpss(&values, &mut RandomSource::new(13)).unwrap();
        assert_eq!(a, b);
    }
}
