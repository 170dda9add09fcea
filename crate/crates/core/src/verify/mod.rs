//! Brute-force oracle and frequency tests used to check every exact sampler.
//!
//! Trials are split into a fixed number of shards, each with its own forked
//! [`RandomSource`], so a verdict depends only on the seed and never on the
//! number of worker threads.

pub mod suites;

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::arith::Rational;
use crate::error::{invalid, Error, Result};
use crate::item::{Item, QueryParams, TotalWeight};
use crate::random::RandomSource;
use crate::samplers::ber_raw;

pub use suites::{run_suite, Suite, SuiteConfig};

/// Default band half-width in standard deviations.
pub const DEFAULT_Z_MAX: f64 = 5.0;

/// Default number of trials per tested distribution.
pub const DEFAULT_TRIALS: u64 = 1_000_000;

/// Expected counts below this are pooled or tested against a Poisson tail.
pub const MIN_EXPECTED_COUNT: f64 = 10.0;

const SHARDS: u64 = 16;

/// Trial budget and randomness for one test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialPlan {
    pub trials: u64,
    pub seed: u64,
    pub threads: usize,
}

impl TrialPlan {
    pub fn new(trials: u64, seed: u64) -> Self {
        TrialPlan { trials, seed, threads: 1 }
    }

    pub fn with_threads(self, threads: usize) -> Self {
        TrialPlan { threads: threads.max(1), ..self }
    }
}

/// Runs `body(src, trials)` once per shard and returns the shard results in
/// shard order.
pub fn run_sharded<A, F>(plan: &TrialPlan, body: F) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(&mut RandomSource, u64) -> Result<A> + Sync,
{
    let mut root = RandomSource::new(plan.seed);
    let mut jobs: Vec<(RandomSource, u64)> = (0..SHARDS)
        .map(|k| (root.fork(k), plan.trials / SHARDS + u64::from(k < plan.trials % SHARDS)))
        .collect();
    let threads = plan.threads.clamp(1, SHARDS as usize);
    if threads == 1 {
        return jobs.iter_mut().map(|(src, n)| body(src, *n)).collect();
    }
    let mut slots: Vec<Option<Result<A>>> = (0..SHARDS).map(|_| None).collect();
    std::thread::scope(|scope| {
        let body = &body;
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let mine: Vec<(usize, RandomSource, u64)> = jobs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| k % threads == t)
                    .map(|(k, (src, n))| (k, src.clone(), *n))
                    .collect();
                scope.spawn(move || mine.into_iter().map(|(k, mut src, n)| (k, body(&mut src, n))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("verification worker panicked") {
                slots[k] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every shard ran")).collect()
}

/// Outcome of one frequency comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyReport {
    pub outcome: String,
    pub expected: Rational,
    pub observed: u64,
    pub trials: u64,
    pub z: f64,
    pub pass: bool,
}

impl FrequencyReport {
    /// Tests a count against a Bernoulli-per-trial expectation `p`.
    pub fn bernoulli(outcome: impl Into<String>, expected: Rational, observed: u64, trials: u64, z_max: f64) -> Self {
        let p = expected.to_f64();
        Self::with_variance(outcome, expected, p * (1.0 - p), observed, trials, z_max)
    }

    /// Tests a count with mean `trials * expected` and per-trial variance
    /// `variance`. Sparse counts on either side use the Poisson tail with the
    /// same two-sided level as `z_max`.
    pub fn with_variance(
        outcome: impl Into<String>,
        expected: Rational,
        variance: f64,
        observed: u64,
        trials: u64,
        z_max: f64,
    ) -> Self {
        let t = trials as f64;
        let mean = expected.to_f64() * t;
        let sd = (variance * t).sqrt();
        let z = if sd > 0.0 { (observed as f64 - mean) / sd } else if observed as f64 == mean { 0.0 } else { f64::INFINITY };
        let pass = if expected.is_zero() {
            observed == 0
        } else if expected == Rational::one() && variance == 0.0 {
            observed == trials
        } else if mean < MIN_EXPECTED_COUNT {
            poisson_consistent(mean, observed, z_max)
        } else if t - mean < MIN_EXPECTED_COUNT && expected <= Rational::one() {
            poisson_consistent(t - mean, trials.saturating_sub(observed), z_max)
        } else {
            z.abs() <= z_max
        };
        FrequencyReport { outcome: outcome.into(), expected, observed, trials, z, pass }
    }

    /// An exact (non-statistical) check rendered as a report row.
    pub fn exact(outcome: impl Into<String>, expected: u64, observed: u64) -> Self {
        let pass = expected == observed;
        FrequencyReport {
            outcome: outcome.into(),
            expected: Rational::from(expected),
            observed,
            trials: 1,
            z: if pass { 0.0 } else { f64::INFINITY },
            pass,
        }
    }
}

/// Two-sided tail probability of a standard normal beyond `z`.
pub fn normal_two_sided_tail(z: f64) -> f64 {
    libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Whether `observed` lies inside both Poisson(`mean`) tails of mass
/// `normal_two_sided_tail(z_max) / 2`.
fn poisson_consistent(mean: f64, observed: u64, z_max: f64) -> bool {
    if mean <= 0.0 {
        return observed == 0;
    }
    let alpha = normal_two_sided_tail(z_max) / 2.0;
    // Pr[X <= k] summed term by term.
    let mut term = (-mean).exp();
    let mut below = 0.0;
    for k in 0..observed {
        below += term;
        term *= mean / (k + 1) as f64;
        if below >= 1.0 {
            break;
        }
    }
    let at_most = below + term;
    let at_least = 1.0 - below;
    at_most > alpha && at_least > alpha
}

/// Whether every report passed.
pub fn all_pass(reports: &[FrequencyReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

/// Writes reports as CSV with columns `outcome,expected,observed,trials,z,pass`.
pub fn write_csv(mut out: impl Write, reports: &[FrequencyReport]) -> io::Result<()> {
    writeln!(out, "outcome,expected,observed,trials,z,pass")?;
    for r in reports {
        writeln!(out, "{},{},{},{},{},{}", csv_field(&r.outcome), r.expected.to_f64(), r.observed, r.trials, fmt_z(r.z), r.pass)?;
    }
    Ok(())
}

fn fmt_z(z: f64) -> String {
    if z.is_finite() {
        format!("{z:.4}")
    } else {
        "inf".to_string()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Samples by flipping one exact coin of probability `min(1, w / W)` per item.
pub fn oracle_pss(items: &[Item], params: &QueryParams, src: &mut RandomSource) -> Result<Vec<u64>> {
    let total: u128 = items.iter().map(|it| it.weight as u128).sum();
    let w = TotalWeight::from_params(params, total)?;
    let mut out = Vec::new();
    for it in items {
        if ber_raw(src, &w.den.mul_u128(it.weight as u128), &w.num) {
            out.push(it.id);
        }
    }
    Ok(out)
}

/// Exact inclusion probabilities `min(1, w / W)`, in item order.
pub fn pss_probabilities(items: &[Item], params: &QueryParams) -> Result<Vec<Rational>> {
    let total: u128 = items.iter().map(|it| it.weight as u128).sum();
    let w = TotalWeight::from_params(params, total)?;
    Ok(items.iter().map(|it| w.probability(it.weight as u128)).collect())
}

/// Single and pairwise inclusion counts over a run of set-valued samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InclusionCounts {
    pub n_items: usize,
    pub trials: u64,
    pub single: Vec<u64>,
    /// Upper triangle, `pair[index(i, j)]` for `i < j`.
    pub pair: Vec<u64>,
    tracked: Vec<bool>,
}

impl InclusionCounts {
    fn new(n_items: usize, tracked: Vec<bool>) -> Self {
        InclusionCounts {
            n_items,
            trials: 0,
            single: vec![0; n_items],
            pair: vec![0; n_items * n_items.saturating_sub(1) / 2],
            tracked,
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * (2 * self.n_items - i - 1) / 2 + (j - i - 1)
    }

    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair[self.index(a, b)]
    }

    fn record(&mut self, sample: &mut [usize], scratch: &mut Vec<usize>) -> Result<()> {
        self.trials += 1;
        sample.sort_unstable();
        scratch.clear();
        for (k, &i) in sample.iter().enumerate() {
            if i >= self.n_items {
                return Err(invalid(format!("sampler returned index {i}, only {} items", self.n_items)));
            }
            if k > 0 && sample[k - 1] == i {
                return Err(Error::InvalidState(format!("sampler returned index {i} twice")));
            }
            self.single[i] += 1;
            if self.tracked[i] {
                scratch.push(i);
            }
        }
        for a in 0..scratch.len() {
            for &j in &scratch[a + 1..] {
                let k = self.index(scratch[a], j);
                self.pair[k] += 1;
            }
        }
        Ok(())
    }

    fn merge(&mut self, other: InclusionCounts) {
        self.trials += other.trials;
        for (a, b) in self.single.iter_mut().zip(other.single) {
            *a += b;
        }
        for (a, b) in self.pair.iter_mut().zip(other.pair) {
            *a += b;
        }
    }
}

/// Runs `sampler` for `plan.trials` trials, counting single and pairwise
/// inclusions. Only items flagged in `track_pairs` (all when `None`) enter
/// pair counts.
pub fn inclusion_counts<F>(sampler: &F, n_items: usize, track_pairs: Option<&[bool]>, plan: &TrialPlan) -> Result<InclusionCounts>
where
    F: Fn(&mut RandomSource, &mut Vec<usize>) -> Result<()> + Sync,
{
    let tracked = track_pairs.map_or_else(|| vec![true; n_items], |t| t.to_vec());
    if tracked.len() != n_items {
        return Err(invalid("pair tracking mask has the wrong length"));
    }
    let shards = run_sharded(plan, |src, trials| {
        let mut counts = InclusionCounts::new(n_items, tracked.clone());
        let mut sample = Vec::new();
        let mut scratch = Vec::new();
        for _ in 0..trials {
            sample.clear();
            sampler(src, &mut sample)?;
            counts.record(&mut sample, &mut scratch)?;
        }
        Ok(counts)
    })?;
    let mut total = InclusionCounts::new(n_items, tracked);
    for s in shards {
        total.merge(s);
    }
    Ok(total)
}

/// Per-item inclusion frequencies against exact probabilities. Items whose
/// expected count is below [`MIN_EXPECTED_COUNT`] are pooled into one row.
pub fn marginal_report(counts: &InclusionCounts, expected: &[Rational], z_max: f64, label: &str) -> Vec<FrequencyReport> {
    assert_eq!(expected.len(), counts.n_items, "one expected probability per item");
    let t = counts.trials;
    let mut reports = Vec::new();
    let (mut pool_p, mut pool_var, mut pool_obs, mut pooled) = (Rational::zero(), 0.0, 0u64, 0usize);
    for (i, p) in expected.iter().enumerate() {
        let pf = p.to_f64();
        if !p.is_zero() && pf * (t as f64) < MIN_EXPECTED_COUNT {
            pool_p = pool_p.add(p);
            pool_var += pf * (1.0 - pf);
            pool_obs += counts.single[i];
            pooled += 1;
        } else {
            reports.push(FrequencyReport::bernoulli(format!("{label}item {i}"), p.clone(), counts.single[i], t, z_max));
        }
    }
    if pooled > 0 {
        reports.push(FrequencyReport::with_variance(
            format!("{label}pooled rare items ({pooled})"),
            pool_p,
            pool_var,
            pool_obs,
            t,
            z_max,
        ));
    }
    reports
}

/// Pairwise independence: `T n_ij - n_i n_j` against its standard error
/// `sqrt(n_i (T - n_i) n_j (T - n_j) / T)` under independence. Pairs with an
/// expected joint count below [`MIN_EXPECTED_COUNT`], or with an item that
/// was always or never included, carry no information and are skipped.
pub fn independence_report(counts: &InclusionCounts, z_max: f64, label: &str) -> Vec<FrequencyReport> {
    let t = counts.trials;
    let tf = t as f64;
    let mut reports = Vec::new();
    for i in 0..counts.n_items {
        if !counts.tracked[i] {
            continue;
        }
        let ni = counts.single[i];
        for j in i + 1..counts.n_items {
            let nj = counts.single[j];
            if !counts.tracked[j] || ni == 0 || nj == 0 || ni == t || nj == t {
                continue;
            }
            let (nif, njf) = (ni as f64, nj as f64);
            if nif * njf / tf < MIN_EXPECTED_COUNT {
                continue;
            }
            let nij = counts.pair_count(i, j);
            let stat = tf * nij as f64 - nif * njf;
            let se = (nif * (tf - nif) * njf * (tf - njf) / tf).sqrt();
            let z = stat / se;
            let expected = Rational::ratio(ni as u128 * nj as u128, t as u128 * t as u128).expect("trials > 0");
            reports.push(FrequencyReport { outcome: format!("{label}pair {i} {j}"), expected, observed: nij, trials: t, z, pass: z.abs() <= z_max });
        }
    }
    reports
}

/// Marginal frequencies of a set-valued sampler over indices `0..expected.len()`.
pub fn marginal_test<F>(sampler: &F, expected: &[Rational], plan: &TrialPlan, z_max: f64) -> Result<Vec<FrequencyReport>>
where
    F: Fn(&mut RandomSource, &mut Vec<usize>) -> Result<()> + Sync,
{
    let mask = vec![false; expected.len()];
    let counts = inclusion_counts(sampler, expected.len(), Some(&mask), plan)?;
    Ok(marginal_report(&counts, expected, z_max, ""))
}

/// Pairwise covariance check of a set-valued sampler over `0..n_items`.
pub fn independence_test<F>(sampler: &F, n_items: usize, plan: &TrialPlan, z_max: f64) -> Result<Vec<FrequencyReport>>
where
    F: Fn(&mut RandomSource, &mut Vec<usize>) -> Result<()> + Sync,
{
    let counts = inclusion_counts(sampler, n_items, None, plan)?;
    Ok(independence_report(&counts, z_max, ""))
}

/// Outcome frequencies of a sampler on `1..=pmf.len()` against an exact pmf.
/// Outcomes with expected count below [`MIN_EXPECTED_COUNT`] are pooled; any
/// value outside the support is reported as a failing row.
pub fn pmf_test<F>(sampler: &F, pmf: &[Rational], plan: &TrialPlan, z_max: f64) -> Result<Vec<FrequencyReport>>
where
    F: Fn(&mut RandomSource) -> Result<u64> + Sync,
{
    let n = pmf.len();
    let shards = run_sharded(plan, |src, trials| {
        let mut counts = vec![0u64; n + 1];
        for _ in 0..trials {
            let v = sampler(src)?;
            let slot = if (1..=n as u64).contains(&v) { v as usize - 1 } else { n };
            counts[slot] += 1;
        }
        Ok(counts)
    })?;
    let mut counts = vec![0u64; n + 1];
    for s in shards {
        for (a, b) in counts.iter_mut().zip(s) {
            *a += b;
        }
    }
    let t = plan.trials;
    let mut reports = Vec::new();
    let (mut pool_p, mut pool_obs, mut pooled) = (Rational::zero(), 0u64, Vec::new());
    for (k, p) in pmf.iter().enumerate() {
        if !p.is_zero() && p.to_f64() * (t as f64) < MIN_EXPECTED_COUNT {
            pool_p = pool_p.add(p);
            pool_obs += counts[k];
            pooled.push(k + 1);
        } else {
            reports.push(FrequencyReport::bernoulli((k + 1).to_string(), p.clone(), counts[k], t, z_max));
        }
    }
    if !pooled.is_empty() {
        reports.push(FrequencyReport::bernoulli(format!("pooled {}", describe_outcomes(&pooled)), pool_p, pool_obs, t, z_max));
    }
    if counts[n] > 0 {
        reports.push(FrequencyReport::exact("outside support", 0, counts[n]));
    }
    Ok(reports)
}

fn describe_outcomes(ks: &[usize]) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < ks.len() {
        let mut j = i;
        while j + 1 < ks.len() && ks[j + 1] == ks[j] + 1 {
            j += 1;
        }
        if !s.is_empty() {
            s.push(' ');
        }
        if i == j {
            let _ = write!(s, "{}", ks[i]);
        } else {
            let _ = write!(s, "{}..{}", ks[i], ks[j]);
        }
        i = j + 1;
    }
    s
}

/// Prefixes each report's outcome with `label`.
pub fn labelled(label: &str, reports: Vec<FrequencyReport>) -> Vec<FrequencyReport> {
    reports.into_iter().map(|r| FrequencyReport { outcome: format!("{label}: {}", r.outcome), ..r }).collect()
}
