use std::collections::hash_map::{DefaultHasher, RandomState};
use std::collections::HashSet;
use std::fs::File;
use std::hash::{BuildHasher, Hash, Hasher};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use dpss_core::perf::{self, BenchRecord};
use dpss_core::verify::{self, Suite, SuiteConfig};
use dpss_core::{read_items, sort_via_dpss, Halt, HaltConfig, QueryParams, RandomSource, Rational};

#[derive(Parser)]
#[command(name = "dpss", version, about = "Dynamic parameterized subset sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a structure from an item file and run one query.
    Query {
        /// Lines of `<id><TAB><weight>`.
        file: PathBuf,
        /// `p/q` or an integer.
        #[arg(long)]
        alpha: Rational,
        #[arg(long)]
        beta: Rational,
        /// Seed; drawn from OS entropy and printed when absent.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite and write its report as CSV.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = verify::DEFAULT_TRIALS)]
        trials: u64,
        /// Shards trials across threads; verdicts do not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure latencies on synthetic workloads and write records as CSV.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        /// Comma-separated sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 100_000, 1_000_000])]
        n: Vec<usize>,
        /// Query settings: a sweep over the expected output size, or one fixed setting.
        #[arg(long, value_enum, default_value_t = Sweep::Mu)]
        sweep: Sweep,
        /// Fixed alpha, used with `--sweep fixed`.
        #[arg(long, default_value = "1")]
        alpha: Rational,
        #[arg(long, default_value = "0")]
        beta: Rational,
        /// Samples per setting (queries) or updates.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sort random distinct integers by repeated sampling.
    SortDemo {
        #[arg(long)]
        n: usize,
        /// Values are drawn from `[0, max_exponent)`.
        #[arg(long, default_value_t = 1 << 20)]
        max_exponent: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Samplers,
    Pss,
    Table,
    SortedSet,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Samplers => Suite::Samplers,
            SuiteArg::Pss => Suite::Pss,
            SuiteArg::Table => Suite::Table,
            SuiteArg::SortedSet => Suite::SortedSet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Query,
    Update,
    Build,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sweep {
    /// One-bucket weights; beta chosen for expected sizes from 1/16 to n/12.
    Mu,
    /// Log-uniform weights; beta halved from the total weight down.
    Beta,
    /// Log-uniform weights with `--alpha` and `--beta`.
    Fixed,
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Query { file, alpha, beta, seed } => {
            let seed = seed.unwrap_or_else(entropy_seed);
            let items = read_items(BufReader::new(File::open(&file)?))?;
            let params = QueryParams::new(alpha, beta)?;
            let h = Halt::with_config(&items, HaltConfig::from_env()?)?;
            let mu = h.expected_size(&params)?.reduced();
            let ids = h.query(&params, &mut RandomSource::new(seed))?;
            writeln!(out, "# seed {seed}")?;
            writeln!(out, "# mu {mu} ({:.6})", mu.to_f64())?;
            writeln!(out, "# sampled {}", ids.len())?;
            for id in ids {
                writeln!(out, "{id}")?;
            }
            Ok(true)
        }
        Command::Verify { suite, seed, trials, threads, out: path } => {
            let suite = Suite::from(suite);
            let cfg = SuiteConfig { seed, trials, threads: threads.max(1), ..SuiteConfig::default() };
            let reports = verify::run_suite(suite, &cfg)?;
            match path {
                Some(p) => verify::write_csv(BufWriter::new(File::create(p)?), &reports)?,
                None => verify::write_csv(&mut out, &reports)?,
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            eprintln!("{suite}: {} checks, {failed} failed", reports.len());
            Ok(failed == 0)
        }
        Command::Bench { kind, n, sweep, alpha, beta, trials, seed, out: path } => {
            let mut records: Vec<BenchRecord> = Vec::new();
            for &size in &n {
                if size == 0 {
                    return Err("sizes must be positive".into());
                }
                match kind {
                    BenchKind::Build => records.push(perf::bench_build(size, perf::build_reps(size), seed)?),
                    BenchKind::Update => records.push(perf::bench_update(size, trials, seed)?),
                    BenchKind::Query => {
                        let (items, params) = match sweep {
                            Sweep::Mu => {
                                let items = perf::one_bucket_items(size, seed);
                                let params = perf::mu_sweep(&items)?;
                                (items, params)
                            }
                            Sweep::Beta => {
                                let items = perf::synthetic_items(size, seed);
                                let params = perf::beta_sweep(&items, 16)?;
                                (items, params)
                            }
                            Sweep::Fixed => {
                                (perf::synthetic_items(size, seed), vec![QueryParams::new(alpha.clone(), beta.clone())?])
                            }
                        };
                        records.extend(perf::bench_query(&items, &params, trials, seed)?);
                    }
                }
            }
            match path {
                Some(p) => perf::write_bench_csv(BufWriter::new(File::create(p)?), &records)?,
                None => perf::write_bench_csv(&mut out, &records)?,
            }
            Ok(true)
        }
        Command::SortDemo { n, max_exponent, seed } => {
            if n == 0 || n as u64 > max_exponent {
                return Err(format!("need 1 <= n <= max-exponent, got n = {n}").into());
            }
            let seed = seed.unwrap_or_else(entropy_seed);
            let mut src = RandomSource::new(seed);
            let mut seen = HashSet::with_capacity(n);
            let mut values = Vec::with_capacity(n);
            while values.len() < n {
                let v = src.random_below(max_exponent)?;
                if seen.insert(v) {
                    values.push(v);
                }
            }
            let t = Instant::now();
            let (sorted, stats) = sort_via_dpss(&values, &mut src)?;
            let elapsed = t.elapsed();
            let mut expected = values;
            expected.sort_unstable_by(|a, b| b.cmp(a));
            let correct = sorted == expected;
            let mut digest = DefaultHasher::new();
            sorted.hash(&mut digest);
            writeln!(out, "seed {seed}")?;
            writeln!(out, "n {n}")?;
            writeln!(out, "digest {:016x}", digest.finish())?;
            writeln!(out, "order {}", if correct { "correct" } else { "WRONG" })?;
            writeln!(
                out,
                "queries/iteration {:.4} (se {:.4})",
                stats.mean_queries_per_iteration(),
                stats.queries_per_iteration_se()
            )?;
            writeln!(out, "sample size {:.4} (se {:.4})", stats.mean_sample_size(), stats.sample_size_se())?;
            writeln!(out, "swaps {} ({:.4} per item)", stats.swaps, stats.swaps_per_item())?;
            writeln!(out, "time {:.3} ms", elapsed.as_secs_f64() * 1e3)?;
            Ok(correct)
        }
    }
}

/// Seed taken from the OS entropy behind the std hasher keys.
fn entropy_seed() -> u64 {
    RandomState::new().hash_one(Instant::now())
}
