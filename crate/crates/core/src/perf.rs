//! Latency and memory measurements for [`Halt`], plus the checks that turn
//! them into scaling verdicts.

use std::hint::black_box;
use std::io::{self, Write};
use std::time::Instant;

use crate::arith::Rational;
use crate::error::Result;
use crate::halt::{Halt, HaltConfig};
use crate::item::{Item, QueryParams};
use crate::random::RandomSource;

/// One measured operation.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub op: String,
    pub n: usize,
    pub params: String,
    pub trials: u64,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub max_ns: f64,
    /// 99.9th percentile: the tail estimate that scheduler preemptions do
    /// not dominate.
    pub p999_ns: f64,
    /// Expected output size, zero for non-query operations.
    pub mu: f64,
}

impl BenchRecord {
    fn from_samples(op: &str, n: usize, params: String, mut ns: Vec<f64>, mu: f64) -> Self {
        assert!(!ns.is_empty());
        ns.sort_by(f64::total_cmp);
        let len = ns.len();
        let mean = ns.iter().sum::<f64>() / len as f64;
        let at = |q: f64| ns[((q * (len - 1) as f64).round() as usize).min(len - 1)];
        BenchRecord {
            op: op.to_string(),
            n,
            params,
            trials: len as u64,
            mean_ns: mean,
            median_ns: at(0.5),
            max_ns: ns[len - 1],
            p999_ns: at(0.999),
            mu,
        }
    }
}

pub fn write_bench_csv(mut out: impl Write, records: &[BenchRecord]) -> io::Result<()> {
    writeln!(out, "op,n,params,trials,mean_ns,median_ns,max_ns,p999_ns,mu")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:.1},{:.1},{:.1},{:.1},{:.6}",
            r.op, r.n, r.params, r.trials, r.mean_ns, r.median_ns, r.max_ns, r.p999_ns, r.mu
        )?;
    }
    Ok(())
}

/// `n` items with ids `0..n` and weights log-uniform over `[1, 2^40)`.
pub fn synthetic_items(n: usize, seed: u64) -> Vec<Item> {
    let mut src = RandomSource::new(seed);
    (0..n as u64).map(|id| Item::new(id, random_weight(&mut src))).collect()
}

fn random_weight(src: &mut RandomSource) -> u64 {
    let e = src.below(40);
    (1u64 << e) | (src.random_word() & ((1u64 << e) - 1))
}

/// Repetitions that give every size a similar total measurement time.
pub fn build_reps(n: usize) -> usize {
    (2_000_000 / n.max(1)).clamp(3, 200)
}

/// Build time in nanoseconds, one sample per repetition.
pub fn bench_build(n: usize, reps: usize, seed: u64) -> Result<BenchRecord> {
    let items = synthetic_items(n, seed);
    let config = HaltConfig::from_env()?;
    let mut ns = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let h = Halt::with_config(&items, config.clone())?;
        ns.push(t.elapsed().as_nanos() as f64);
        black_box(h);
    }
    Ok(BenchRecord::from_samples("build", n, "-".into(), ns, 0.0))
}

/// Single-update latencies: alternating deletion of a random live item and
/// insertion of a fresh one, so the size stays at `n`.
pub fn bench_update(n: usize, updates: usize, seed: u64) -> Result<BenchRecord> {
    let items = synthetic_items(n, seed);
    let mut h = Halt::with_config(&items, HaltConfig::from_env()?)?;
    let mut live: Vec<u64> = items.iter().map(|it| it.id).collect();
    let mut src = RandomSource::new(seed ^ 0x5bd1_e995);
    let mut next_id = n as u64;
    // Warm-up touches every container once before timing.
    let mut ns = Vec::with_capacity(updates);
    for round in 0..2 {
        let count = if round == 0 { updates.min(n).max(1) } else { updates.max(1) };
        for _ in 0..count {
            let slot = src.below(live.len() as u64) as usize;
            let id = live[slot];
            let t = Instant::now();
            h.delete(id)?;
            let del = t.elapsed().as_nanos() as f64;
            let item = Item::new(next_id, random_weight(&mut src));
            let t = Instant::now();
            h.insert(item)?;
            let ins = t.elapsed().as_nanos() as f64;
            live[slot] = next_id;
            next_id += 1;
            if round == 1 {
                ns.push(del);
                ns.push(ins);
            }
        }
    }
    Ok(BenchRecord::from_samples("update", n, "-".into(), ns, 0.0))
}

/// Query latencies for each `params`, `queries` samples each. Samples are
/// timed in small batches so the clock overhead stays negligible, and the
/// settings take turns in rounds so slow phases of the machine hit them alike.
pub fn bench_query(items: &[Item], params: &[QueryParams], queries: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    const ROUNDS: usize = 20;
    let n = items.len();
    let h = Halt::with_config(items, HaltConfig::from_env()?)?;
    let mut src = RandomSource::new(seed ^ 0x2545_f491);
    let mut out = Vec::with_capacity(64);
    let mut mus = Vec::with_capacity(params.len());
    for p in params {
        mus.push(h.expected_size(p)?.to_f64());
    }
    let batches: Vec<usize> = mus.iter().map(|&mu| if mu < 100.0 { 16 } else { 1 }).collect();
    let mut ns: Vec<Vec<f64>> = vec![Vec::new(); params.len()];
    for round in 0..ROUNDS {
        for (i, p) in params.iter().enumerate() {
            let batch = batches[i];
            // Round `r` takes samples up to `r + 1` twentieths of the total.
            let target = (queries.max(1) * (round + 1)).div_ceil(ROUNDS * batch);
            while ns[i].len() < target {
                let t = Instant::now();
                for _ in 0..batch {
                    out.clear();
                    h.query_into(p, &mut src, &mut out)?;
                    black_box(&out);
                }
                ns[i].push(t.elapsed().as_nanos() as f64 / batch as f64);
            }
        }
    }
    Ok(params
        .iter()
        .zip(ns)
        .zip(mus)
        .map(|((p, ns), mu)| BenchRecord::from_samples("query", n, describe(p), ns, mu))
        .collect())
}

fn describe(p: &QueryParams) -> String {
    format!("alpha={} beta={}", p.alpha(), p.beta())
}

/// `(alpha, beta) = (0, total / 2^k)` for `k` in `0..=steps`, so the
/// expected size rises from about `total / max weight` towards `n`.
pub fn beta_sweep(items: &[Item], steps: u32) -> Result<Vec<QueryParams>> {
    let total = Rational::from_int(items.iter().map(|it| it.weight as u128).sum::<u128>());
    (0..=steps).map(|k| QueryParams::new(Rational::zero(), total.mul(&Rational::ratio(1, 1u64 << k)?))).collect()
}

/// `n` items with weights uniform over `[2^30, 2^31)`: one bucket, so every
/// sampled item costs the same and query time is a clean function of `mu`.
pub fn one_bucket_items(n: usize, seed: u64) -> Vec<Item> {
    let mut src = RandomSource::new(seed);
    (0..n as u64).map(|id| Item::new(id, (1 << 30) | src.below(1 << 30))).collect()
}

/// `(0, beta)` settings for [`one_bucket_items`] with expected sizes from
/// 1/16 up to `n/12`. `beta` stays at least `2^34`, so every item has
/// probability below 1/8 and each sampled item comes from a skip draw.
pub fn mu_sweep(items: &[Item]) -> Result<Vec<QueryParams>> {
    let n = items.len() as u64;
    let total = Rational::from_int(items.iter().map(|it| it.weight as u128).sum::<u128>());
    let mut targets: Vec<Rational> = [(1, 16), (1, 4), (1, 1), (4, 1), (16, 1), (64, 1)]
        .iter()
        .map(|&(a, b)| Rational::ratio(a, b))
        .collect::<Result<_>>()?;
    for i in 1..=8 {
        targets.push(Rational::ratio(i * n, 96)?);
    }
    let floor = Rational::from_int(1u64 << 34);
    targets
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| {
            let beta = total.div(t)?;
            QueryParams::new(Rational::zero(), if beta < floor { floor.clone() } else { beta })
        })
        .collect()
}

/// Memory in words of a freshly built structure on `n` synthetic items.
pub fn memory_words(n: usize, seed: u64) -> Result<usize> {
    Ok(Halt::with_config(&synthetic_items(n, seed), HaltConfig::from_env()?)?.memory_words())
}

/// Least-squares line through `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
}

impl LinearFit {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(x.len() >= 2);
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
        let intercept = my - slope * mx;
        let residuals = x.iter().zip(y).map(|(a, b)| b - (intercept + slope * a)).collect();
        LinearFit { intercept, slope, residuals }
    }

    /// Largest absolute residual relative to the mean of `y`.
    pub fn max_relative_residual(&self, y: &[f64]) -> f64 {
        let my = y.iter().sum::<f64>() / y.len() as f64;
        self.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs())) / my
    }
}

/// Ratio of the largest to the smallest value.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = LinearFit::new(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!(f.max_relative_residual(&y) < 1e-12);
        let bent = [3.0, 5.0, 7.0, 20.0];
        assert!(LinearFit::new(&x, &bent).max_relative_residual(&bent) > 0.2);
    }

    #[test]
    fn record_statistics() {
        let r = BenchRecord::from_samples("x", 1, "-".into(), vec![4.0, 1.0, 3.0, 2.0, 10.0], 0.0);
        assert_eq!((r.trials, r.median_ns, r.max_ns, r.mean_ns), (5, 3.0, 10.0, 4.0));
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "x,1,-,5,4.0,3.0,10.0,10.0,0.000000");
    }

    #[test]
    fn synthetic_items_are_reproducible_and_positive() {
        let a = synthetic_items(1000, 3);
        assert_eq!(a, synthetic_items(1000, 3));
        assert!(a.iter().all(|it| it.weight >= 1 && it.weight < 1 << 40));
    }

    #[test]
    fn sweep_raises_mu() {
        let items = synthetic_items(2000, 4);
        let h = Halt::build(&items).unwrap();
        let mus: Vec<f64> = beta_sweep(&items, 12).unwrap().iter().map(|p| h.expected_size(p).unwrap().to_f64()).collect();
        assert!(mus.windows(2).all(|w| w[0] <= w[1]));
        assert!(mus[0] <= 1.0 + 1e-9 && mus[12] > 100.0);
    }

    #[test]
    fn mu_sweep_stays_below_one_eighth() {
        let items = one_bucket_items(9600, 5);
        let h = Halt::build(&items).unwrap();
        let params = mu_sweep(&items).unwrap();
        let mus: Vec<Rational> = params.iter().map(|p| h.expected_size(p).unwrap()).collect();
        assert_eq!(mus.len(), 14);
        assert_eq!(mus[0], Rational::ratio(1, 16).unwrap());
        assert!(mus.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(mus[13], Rational::from_int(800u64));
        let top = &params[13];
        assert!(items.iter().all(|it| Rational::from_int(it.weight as u128 * 8) < *top.beta()));
    }

    #[test]
    fn small_measurements_run() {
        assert_eq!(bench_build(500, 2, 1).unwrap().trials, 2);
        assert_eq!(bench_update(500, 100, 1).unwrap().trials, 200);
        let items = synthetic_items(500, 1);
        let recs = bench_query(&items, &beta_sweep(&items, 3).unwrap(), 64, 1).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(memory_words(500, 1).unwrap() > 500);
    }
}
