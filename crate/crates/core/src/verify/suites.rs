//! Named verification suites: samplers, PSS end to end, lookup tables and
//! the bounded sorted set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::{
    independence_report, inclusion_counts, labelled, marginal_report, pmf_test, pss_probabilities, FrequencyReport,
    TrialPlan, DEFAULT_TRIALS, DEFAULT_Z_MAX,
};
use crate::arith::{Nat, Rational};
use crate::error::{invalid, Result};
use crate::halt::table::{result_probability, LookupTable};
use crate::halt::Halt;
use crate::item::{read_items, Item, QueryParams};
use crate::random::RandomSource;
use crate::samplers::{
    ber_half_inv_pstar, ber_pstar, ber_rational, bgeo, bgeo_reference, tgeo, tgeo_counted,
};
use crate::sorted_set::{BoundedIntSet, MAX_UNIVERSE};

/// The bundled 64-item instance.
pub const FIXTURE_64: &str = include_str!("../../fixtures/items64.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Samplers,
    Pss,
    Table,
    SortedSet,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Samplers, Suite::Pss, Suite::Table, Suite::SortedSet];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Samplers => "samplers",
            Suite::Pss => "pss",
            Suite::Table => "table",
            Suite::SortedSet => "sorted-set",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| invalid(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: u64,
    pub threads: usize,
    pub z_max: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 1, trials: DEFAULT_TRIALS, threads: 1, z_max: DEFAULT_Z_MAX }
    }
}

impl SuiteConfig {
    /// Plan for the `k`-th test of a suite; every test gets its own seed.
    pub fn plan(&self, k: u64) -> TrialPlan {
        let seed = self.seed ^ (k + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        TrialPlan::new(self.trials, seed).with_threads(self.threads)
    }
}

pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<Vec<FrequencyReport>> {
    match suite {
        Suite::Samplers => sampler_suite(cfg),
        Suite::Pss => {
            let items = read_items(FIXTURE_64.as_bytes())?;
            let mut out = Vec::new();
            for (k, params) in pss_settings(&items).iter().enumerate() {
                out.extend(pss_check("fixture64", &items, params, &cfg.plan(k as u64), cfg.z_max)?);
            }
            let small = pss_instances().into_iter().find(|(name, _)| name == "spread16").expect("instance exists").1;
            out.extend(pss_check("spread16", &small, &ratio(1, 4, 0, 1), &cfg.plan(100), cfg.z_max)?);
            Ok(out)
        }
        Suite::Table => table_suite(cfg),
        Suite::SortedSet => sorted_set_suite(cfg),
    }
}

fn ratio(an: u64, ad: u64, bn: u64, bd: u64) -> QueryParams {
    QueryParams::from_ratios(an, ad, bn, bd).expect("valid literal parameters")
}

fn r(a: u64, b: u64) -> Rational {
    Rational::ratio(a, b).expect("nonzero denominator")
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// `Pr[i] = p q^(i-1)` for `i < n` and `q^(n-1)` at `n`.
pub fn bgeo_pmf(p: &Rational, n: u64) -> Vec<Rational> {
    let q = Rational::one().sub(p);
    (1..=n).map(|i| if i < n { p.mul(&q.pow(i - 1)) } else { q.pow(n - 1) }).collect()
}

/// `Pr[i] = p q^(i-1) / (1 - q^n)`.
pub fn tgeo_pmf(p: &Rational, n: u64) -> Vec<Rational> {
    let q = Rational::one().sub(p);
    let z = Rational::one().sub(&q.pow(n));
    (1..=n).map(|i| p.mul(&q.pow(i - 1)).div(&z).expect("z > 0")).collect()
}

/// `(1 - (1 - q)^n) / (n q)` straight from the definition.
pub fn pstar_definition(q: &Rational, n: u64) -> Rational {
    let top = Rational::one().sub(&Rational::one().sub(q).pow(n));
    top.div(&q.mul(&Rational::from(n))).expect("q > 0")
}

fn coin_report<F>(label: String, sampler: &F, p: Rational, plan: &TrialPlan, z_max: f64) -> Result<Vec<FrequencyReport>>
where
    F: Fn(&mut RandomSource) -> Result<bool> + Sync,
{
    let pmf = vec![p.clone(), Rational::one().sub(&p)];
    let as_outcome = |src: &mut RandomSource| sampler(src).map(|b| if b { 1 } else { 2 });
    let reports = pmf_test(&as_outcome, &pmf, plan, z_max)?;
    Ok(labelled(&label, reports))
}

fn sampler_suite(cfg: &SuiteConfig) -> Result<Vec<FrequencyReport>> {
    let z = cfg.z_max;
    let mut out = Vec::new();
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        cfg.plan(k)
    };

    let big = Rational::from_nats(Nat::pow2(100).add_u64(12345), Nat::pow2(100).mul_u64(3)).expect("positive");
    let coins = [r(1, 2), r(1, 3), r(7, 13), r(999, 1000), r(1, 1000), big];
    for p in coins {
        let sampler = |src: &mut RandomSource| ber_rational(src, &p);
        out.extend(coin_report(format!("ber_rational({p})"), &sampler, p.clone(), &next(), z)?);
    }

    for (q, n) in [(r(1, 2), 2), (r(1, 32), 32), (r(1, 100), 50), (r(3, 1000), 300), (r(2, 5), 1)] {
        let expected = pstar_definition(&q, n);
        let sampler = |src: &mut RandomSource| ber_pstar(src, &q, n);
        out.extend(coin_report(format!("ber_pstar({q}, {n})"), &sampler, expected.clone(), &next(), z)?);
        let half = Rational::one().div(&expected.mul(&Rational::from(2u64))).expect("p* > 0");
        let sampler = |src: &mut RandomSource| ber_half_inv_pstar(src, &q, n);
        out.extend(coin_report(format!("ber_half_inv_pstar({q}, {n})"), &sampler, half, &next(), z)?);
    }

    for (p, n) in [(r(1, 2), 3), (r(1, 10), 50), (r(1, 10_000), 101), (r(3, 7), 20), (r(1, 3), 1)] {
        let pmf = bgeo_pmf(&p, n);
        let fast = |src: &mut RandomSource| bgeo(src, &p, n);
        out.extend(labelled(&format!("bgeo({p}, {n})"), pmf_test(&fast, &pmf, &next(), z)?));
        let reference = |src: &mut RandomSource| bgeo_reference(src, &p, n);
        out.extend(labelled(&format!("bgeo_reference({p}, {n})"), pmf_test(&reference, &pmf, &next(), z)?));
    }

    // Case 1 (n <= 2), case 2.1 (n p >= 1) and case 2.2 (n p < 1).
    for (p, n) in [(r(1, 2), 2), (r(1, 3), 1), (r(1, 4), 8), (r(1, 2), 10), (r(1, 100), 10), (r(1, 1000), 50), (r(1, 7), 5)] {
        let pmf = tgeo_pmf(&p, n);
        let sampler = |src: &mut RandomSource| tgeo(src, &p, n);
        out.extend(labelled(&format!("tgeo({p}, {n})"), pmf_test(&sampler, &pmf, &next(), z)?));
    }

    // Case 2.2 accepts each proposal with probability exactly 1/2, so the
    // proposal count is Geometric(1/2): mean 2, variance 2.
    for (p, n) in [(r(1, 100), 10), (r(1, 1000), 50), (r(1, 7), 5)] {
        let (pn, pd) = (p.numer().magnitude().clone(), p.denom().magnitude().clone());
        let plan = next();
        let shards = super::run_sharded(&plan, |src, trials| {
            let mut rounds = 0u64;
            for _ in 0..trials {
                rounds += tgeo_counted(src, &pn, &pd, n).1;
            }
            Ok(rounds)
        })?;
        let rounds: u64 = shards.iter().sum();
        out.push(FrequencyReport::with_variance(
            format!("tgeo({p}, {n}): proposals per call"),
            Rational::from(2u64),
            2.0,
            rounds,
            plan.trials,
            z,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PSS end to end
// ---------------------------------------------------------------------------

/// Five parameter settings spanning the all-insignificant, all-certain and
/// mixed regimes, plus one with both parameters non-zero.
pub fn pss_settings(items: &[Item]) -> Vec<QueryParams> {
    let total: u128 = items.iter().map(|it| it.weight as u128).sum::<u128>().max(1);
    let mut positive: Vec<u64> = items.iter().map(|it| it.weight).filter(|&w| w > 0).collect();
    positive.sort_unstable();
    let median = positive.get(positive.len() / 2).copied().unwrap_or(1).max(1);
    let huge = Rational::from_int(total).mul(&Rational::from(1u64 << 15));
    vec![
        ratio(1, 1, 0, 1),
        ratio(1, 16, 0, 1),
        ratio(0, 1, 1, 1),
        QueryParams::new(Rational::zero(), huge).expect("non-negative"),
        ratio(0, 1, median, 1),
        ratio(1, 3, 7, 1),
    ]
}

/// Deterministic test instances with at most 64 items each.
pub fn pss_instances() -> Vec<(String, Vec<Item>)> {
    let mut src = RandomSource::new(0x5eed_f1c7);
    let mut out: Vec<(String, Vec<Item>)> = Vec::new();
    let mut add = |name: &str, weights: Vec<u64>| {
        let items = weights.into_iter().enumerate().map(|(i, w)| Item::new(i as u64, w)).collect();
        out.push((name.to_string(), items));
    };
    add("single", vec![4]);
    add("pair-equal", vec![4, 4]);
    add("pair-skewed", vec![1, 1 << 40]);
    add("ones16", vec![1; 16]);
    add("powers-of-two", (0..62).map(|i| 1u64 << i).collect());
    add("spread16", (0..16).map(|i| 1 + (i as u64) * (i as u64) * 37).collect());
    add("fib-dense", (0..64).map(|i| [1u64, 2, 3, 5, 8, 13][i % 6] << (i % 3)).collect());
    add("with-zeros", (0..40).map(|i| if i % 5 == 0 { 0 } else { 1 + i as u64 * 3 }).collect());
    add("heavy-hitter", (0..64).map(|i| if i == 0 { 1 << 50 } else { 1 + i as u64 }).collect());
    add("two-scales", (0..64).map(|i| if i % 2 == 0 { 3 } else { 3 << 30 }).collect());
    add("near-powers", (1..=48).map(|i| (1u64 << (i % 40 + 1)) - 1).collect());
    add("max-weights", (0..8).map(|i| (u64::MAX >> 1) - i).collect());
    for (k, bits) in [8u32, 16, 24, 32, 48, 62].into_iter().enumerate() {
        let n = 20 + 8 * k;
        let weights = (0..n).map(|_| 1 + (src.random_word() >> (64 - bits))).collect();
        add(&format!("uniform{bits}x{n}"), weights);
    }
    for k in 0..4 {
        let n = 64 - 10 * k;
        let weights = (0..n).map(|_| 1 + (src.random_word() >> (1 + src.random_word() % 62))).collect();
        add(&format!("log-uniform{n}"), weights);
    }
    add("fixture64", read_items(FIXTURE_64.as_bytes()).expect("bundled fixture parses").into_iter().map(|it| it.weight).collect());
    out
}

/// Per-item marginals and pairwise covariances of HALT queries on `items`.
pub fn pss_check(name: &str, items: &[Item], params: &QueryParams, plan: &TrialPlan, z_max: f64) -> Result<Vec<FrequencyReport>> {
    let halt = Halt::build(items)?;
    let expected = pss_probabilities(items, params)?;
    let index: std::collections::HashMap<u64, usize> = items.iter().enumerate().map(|(i, it)| (it.id, i)).collect();
    let sampler = |src: &mut RandomSource, out: &mut Vec<usize>| -> Result<()> {
        let ids = halt.query(params, src)?;
        out.extend(ids.iter().map(|id| index[id]));
        Ok(())
    };
    let track: Vec<bool> = expected.iter().map(|p| !p.is_zero() && *p != Rational::one()).collect();
    let counts = inclusion_counts(&sampler, items.len(), Some(&track), plan)?;
    let label = format!("{name} [{params}] ");
    let mut reports = marginal_report(&counts, &expected, z_max, &label);
    reports.extend(independence_report(&counts, z_max, &label));
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Lookup tables
// ---------------------------------------------------------------------------

/// Slot/size combinations whose tables have at most 10^4 rows.
pub const EXACT_TABLES: [(usize, u32); 8] = [(1, 2), (2, 2), (2, 3), (3, 3), (2, 5), (3, 4), (4, 3), (3, 5)];

/// Counts `(row, r)` pairs whose multiplicity differs from `Pr(r) (m^2)^K`.
pub fn table_mismatches(k: usize, m: u32) -> Result<u64> {
    let t = LookupTable::build(k, m)?;
    let total = Rational::from(t.cells_per_row());
    let mut bad = 0;
    let mut config = vec![0u8; k];
    for row in 0..t.rows() {
        let mut rem = row;
        for c in config.iter_mut() {
            *c = (rem % (m as usize + 1)) as u8;
            rem /= m as usize + 1;
        }
        let mut mult = vec![0u64; 1 << k];
        for &cell in t.row_cells(t.row_index(&config)?) {
            mult[cell as usize] += 1;
        }
        for (res, &count) in mult.iter().enumerate() {
            if Rational::from(count) != result_probability(&config, res as u8, m).mul(&total) {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

fn table_suite(cfg: &SuiteConfig) -> Result<Vec<FrequencyReport>> {
    let mut out = Vec::new();
    for (k, m) in EXACT_TABLES {
        out.push(FrequencyReport::exact(format!("table K={k} m={m}: mismatched multiplicities"), 0, table_mismatches(k, m)?));
    }
    let t = LookupTable::build(3, 4)?;
    let config = [2u8, 1, 3];
    let pmf: Vec<Rational> = (0..8u8).map(|res| result_probability(&config, res, 4)).collect();
    let sampler = |src: &mut RandomSource| t.sample(&config, src).map(|res| res as u64 + 1);
    out.extend(labelled("table K=3 m=4 row [2 1 3] (outcome = result + 1)", pmf_test(&sampler, &pmf, &cfg.plan(0), cfg.z_max)?));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Bounded sorted set
// ---------------------------------------------------------------------------

fn sorted_set_suite(cfg: &SuiteConfig) -> Result<Vec<FrequencyReport>> {
    let ops = cfg.trials.min(200_000);
    let mut out = Vec::new();
    for (k, universe) in [1usize, 2, 63, 64, 65, 128, 200, MAX_UNIVERSE].into_iter().enumerate() {
        let mut src = RandomSource::new(cfg.plan(k as u64).seed);
        let mut set = BoundedIntSet::new(universe)?;
        let mut oracle = BTreeSet::new();
        let (mut update_bad, mut query_bad) = (0u64, 0u64);
        for step in 0..ops {
            let q = src.random_below(universe as u64)? as usize;
            match src.random_below(4)? {
                0 | 1 => update_bad += u64::from(set.insert(q).is_ok() != oracle.insert(q)),
                2 => update_bad += u64::from(set.delete(q).is_ok() != oracle.remove(&q)),
                _ => {
                    let succ = oracle.range(q..).next().copied();
                    let pred = oracle.range(..=q).next_back().copied();
                    query_bad += u64::from(set.successor(q) != succ) + u64::from(set.predecessor(q) != pred);
                    query_bad += u64::from(set.contains(q) != oracle.contains(&q));
                }
            }
            if step % 10_000 == 0 {
                query_bad += u64::from(set.audit().is_err());
                query_bad += u64::from(!set.iter().eq(oracle.iter().copied()));
            }
        }
        query_bad += u64::from(set.min() != oracle.first().copied()) + u64::from(set.max() != oracle.last().copied());
        out.push(FrequencyReport::exact(format!("sorted-set universe={universe}: update mismatches"), 0, update_bad));
        out.push(FrequencyReport::exact(format!("sorted-set universe={universe}: query mismatches"), 0, query_bad));
    }
    Ok(out)
}
