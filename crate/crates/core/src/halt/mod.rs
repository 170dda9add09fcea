//! Dynamic parameterized subset sampling: a three-level bucket-grouping
//! hierarchy whose final level is answered by a static lookup table through
//! per-instance adapters.
//!
//! Queries take expected `O(1 + mu)` time and updates `O(1)` worst-case time
//! between rebuilds. The structure is rebuilt from scratch whenever the item
//! count leaves `[n0 / 2, 2 n0]`; in [`RebuildMode::Deamortized`] the
//! replacement is built a few items per update instead.

mod core;
pub mod table;

use std::sync::Arc;

pub use self::core::{Adapter, HaltParams, ADAPTER_WIDTH};
pub use self::table::{LookupTable, TableBuilder};

use self::core::{HaltCore, ZERO_BUCKET};
use crate::arith::Rational;
use crate::bg::BUCKETS;
use crate::error::{invalid, Error, Result};
use crate::item::{expected_size, Item, QueryParams, TotalWeight};
use crate::random::RandomSource;

/// Default lookup-table budget, in words per item at build time.
pub const DEFAULT_TABLE_BUDGET_WORDS: u64 = 4;

/// Environment variable overriding [`DEFAULT_TABLE_BUDGET_WORDS`].
pub const TABLE_BUDGET_ENV: &str = "DPSS_TABLE_BUDGET_WORDS";

/// Below this size a replacement structure is always built in one go.
const MIN_INCREMENTAL_N0: usize = 256;

/// Items migrated into the replacement per update.
const MIGRATION_STEPS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RebuildMode {
    /// Rebuild everything on the update that leaves the size window.
    Amortized,
    /// Build the replacement incrementally alongside updates.
    Deamortized,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HaltConfig {
    pub table_budget_words: u64,
    pub rebuild: RebuildMode,
}

impl HaltConfig {
    /// Default configuration with the table budget taken from
    /// `DPSS_TABLE_BUDGET_WORDS` when set.
    pub fn from_env() -> Result<Self> {
        let mut config = HaltConfig { table_budget_words: DEFAULT_TABLE_BUDGET_WORDS, rebuild: RebuildMode::Amortized };
        if let Ok(v) = std::env::var(TABLE_BUDGET_ENV) {
            config.table_budget_words =
                v.trim().parse().map_err(|_| invalid(format!("{TABLE_BUDGET_ENV}={v:?} is not a word count")))?;
        }
        Ok(config)
    }
}

impl Default for HaltConfig {
    fn default() -> Self {
        HaltConfig::from_env()
            .unwrap_or(HaltConfig { table_budget_words: DEFAULT_TABLE_BUDGET_WORDS, rebuild: RebuildMode::Amortized })
    }
}

/// Replacement structure under construction.
#[derive(Clone, Debug)]
struct Shadow {
    core: HaltCore,
    table: Option<TableBuilder>,
    table_quota: usize,
    /// Bucket being copied; `BUCKETS` stands for the zero-weight list.
    bucket: usize,
    /// Positions at or above this one in `bucket` are already copied.
    cursor: usize,
}

#[derive(Clone, Debug)]
pub struct Halt {
    core: HaltCore,
    config: HaltConfig,
    shadow: Option<Shadow>,
    rebuilds: u64,
}

impl Halt {
    pub fn build(items: &[Item]) -> Result<Self> {
        Halt::with_config(items, HaltConfig::default())
    }

    pub fn with_config(items: &[Item], config: HaltConfig) -> Result<Self> {
        let core = HaltCore::build(items, config.table_budget_words)?;
        Ok(Halt { core, config, shadow: None, rebuilds: 0 })
    }

    pub fn config(&self) -> &HaltConfig {
        &self.config
    }

    pub fn params(&self) -> &HaltParams {
        &self.core.params
    }

    pub fn table(&self) -> &LookupTable {
        &self.core.table
    }

    /// Number of items, zero weights included.
    pub fn len(&self) -> usize {
        self.core.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.len() == 0
    }

    /// Size at the last rebuild.
    pub fn n0(&self) -> usize {
        self.core.params.n0
    }

    pub fn total_weight(&self) -> u128 {
        self.core.level1.total()
    }

    pub fn rebuild_count(&self) -> u64 {
        self.rebuilds
    }

    pub fn contains(&self, id: u64) -> bool {
        self.core.contains(id)
    }

    pub fn weight(&self, id: u64) -> Option<u64> {
        self.core.weight(id)
    }

    pub fn items(&self) -> Vec<Item> {
        self.core.items()
    }

    /// Exact expected sample size for `params`.
    pub fn expected_size(&self, params: &QueryParams) -> Result<Rational> {
        if self.is_empty() {
            return Ok(Rational::zero());
        }
        let w = TotalWeight::from_params(params, self.total_weight())?;
        let weights = self.core.level1.nonempty_buckets().iter().flat_map(|b| self.core.level1.bucket(b).iter().map(|e| e.1));
        Ok(expected_size(weights, &w))
    }

    /// Samples each item independently with probability
    /// `min(1, w / (alpha * total + beta))`.
    pub fn query(&self, params: &QueryParams, src: &mut RandomSource) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        self.core.query_into(params, src, &mut out, true)?;
        Ok(out)
    }

    /// Like [`Halt::query`], appending to `out`.
    pub fn query_into(&self, params: &QueryParams, src: &mut RandomSource, out: &mut Vec<u64>) -> Result<()> {
        self.core.query_into(params, src, out, true)
    }

    /// Same distribution as [`Halt::query`], with final-level instances
    /// answered bucket by bucket instead of through the lookup table.
    pub fn query_direct_into(&self, params: &QueryParams, src: &mut RandomSource, out: &mut Vec<u64>) -> Result<()> {
        self.core.query_into(params, src, out, false)
    }

    pub fn insert(&mut self, item: Item) -> Result<()> {
        self.core.insert(item.id, item.weight)?;
        if let Some(sh) = self.shadow.as_mut() {
            sh.core.insert(item.id, item.weight)?;
        }
        self.after_update();
        Ok(())
    }

    /// Removes `id` and returns its weight.
    pub fn delete(&mut self, id: u64) -> Result<u64> {
        let (w, (tag, _)) = self.core.delete(id)?;
        if let Some(sh) = self.shadow.as_mut() {
            let b = if tag == ZERO_BUCKET { BUCKETS } else { tag as usize };
            if b == sh.bucket {
                sh.cursor = sh.cursor.min(bucket_len(&self.core, b));
            }
            if sh.core.contains(id) {
                sh.core.delete(id)?;
            }
        }
        self.after_update();
        Ok(w)
    }

    /// Rebuilds from the live items; `n0` becomes the current size.
    pub fn rebuild(&mut self) {
        let items = self.core.items();
        let params = HaltParams::for_size(items.len(), self.config.table_budget_words);
        let table = if same_table(&params, &self.core.params) {
            Arc::clone(&self.core.table)
        } else {
            HaltCore::build_table(&params)
        };
        self.core = HaltCore::from_items(params, table, &items).expect("live ids are distinct");
        self.shadow = None;
        self.rebuilds += 1;
    }

    fn out_of_window(&self) -> bool {
        let (n, n0) = (self.len(), self.n0());
        n > 2 * n0 || 2 * n < n0
    }

    fn after_update(&mut self) {
        match self.config.rebuild {
            RebuildMode::Amortized => {
                if self.out_of_window() {
                    self.rebuild();
                }
            }
            RebuildMode::Deamortized => self.deamortized_step(),
        }
    }

    fn deamortized_step(&mut self) {
        let (n, n0) = (self.len(), self.n0());
        if n0 < MIN_INCREMENTAL_N0 {
            if self.out_of_window() {
                self.rebuild();
            }
            return;
        }
        if self.shadow.is_none() && (2 * n >= 3 * n0 || 4 * n <= 3 * n0) {
            self.shadow = Some(self.start_shadow());
        }
        let Some(mut sh) = self.shadow.take() else { return };
        let done = sh.advance(&self.core, MIGRATION_STEPS);
        if done {
            self.install(sh);
        } else if self.out_of_window() {
            // Steps were too slow for this update pattern; finish now.
            while !sh.advance(&self.core, usize::MAX) {}
            self.install(sh);
        } else {
            self.shadow = Some(sh);
        }
    }

    fn start_shadow(&self) -> Shadow {
        let params = HaltParams::for_size(self.len(), self.config.table_budget_words);
        let (table, builder) = if same_table(&params, &self.core.params) {
            (Arc::clone(&self.core.table), None)
        } else {
            let b = TableBuilder::new(params.slots, params.m, u128::MAX).expect("slot count chosen within budget");
            (Arc::new(LookupTable::empty(params.m)), Some(b))
        };
        let table_quota = builder.as_ref().map_or(0, |b| 8 * b.total_cells() / params.n0.max(1) + 1);
        let bucket = self.core.level1.nonempty_buckets().min().unwrap_or(BUCKETS);
        Shadow {
            core: HaltCore::empty(params, table),
            table: builder,
            table_quota,
            bucket,
            cursor: bucket_len(&self.core, bucket),
        }
    }

    fn install(&mut self, mut sh: Shadow) {
        if let Some(b) = sh.table.take() {
            sh.core.table = Arc::new(b.finish());
        }
        self.core = sh.core;
        self.rebuilds += 1;
        if self.out_of_window() {
            self.rebuild();
        }
    }

    /// Full-scan check of every structural invariant.
    pub fn audit(&self) -> Result<()> {
        self.core.audit()?;
        if self.out_of_window() && self.config.rebuild == RebuildMode::Amortized {
            return Err(Error::InvalidState(format!("size {} outside the window of n0 = {}", self.len(), self.n0())));
        }
        if let Some(sh) = &self.shadow {
            sh.core.audit()?;
        }
        Ok(())
    }

    /// Resident size in words, found by traversal.
    pub fn memory_words(&self) -> usize {
        let mut bytes = std::mem::size_of::<Self>() + self.core.heap_bytes();
        if let Some(sh) = &self.shadow {
            bytes += sh.core.heap_bytes() + sh.table.as_ref().map_or(0, |b| b.total_cells());
        }
        bytes.div_ceil(8)
    }
}

fn same_table(a: &HaltParams, b: &HaltParams) -> bool {
    a.m == b.m && a.slots == b.slots
}

fn bucket_len(core: &HaltCore, b: usize) -> usize {
    if b == BUCKETS {
        core.zero.len()
    } else if b < BUCKETS {
        core.level1.bucket(b).len()
    } else {
        0
    }
}

impl Shadow {
    /// Copies up to `steps` items and fills a slice of the table. Returns
    /// whether the replacement is complete.
    fn advance(&mut self, old: &HaltCore, steps: usize) -> bool {
        let mut left = steps;
        while left > 0 && self.bucket <= BUCKETS {
            if self.cursor == 0 {
                self.bucket = if self.bucket >= BUCKETS - 1 {
                    self.bucket + 1
                } else {
                    old.level1.nonempty_buckets().successor(self.bucket + 1).unwrap_or(BUCKETS)
                };
                self.cursor = bucket_len(old, self.bucket);
                continue;
            }
            self.cursor -= 1;
            left -= 1;
            let (id, w) = if self.bucket == BUCKETS {
                (old.zero[self.cursor], 0)
            } else {
                old.level1.bucket(self.bucket)[self.cursor]
            };
            if !self.core.contains(id) {
                self.core.insert(id, w).expect("fresh id");
            }
        }
        let table_done = match self.table.as_mut() {
            Some(b) => b.step(if steps == usize::MAX { usize::MAX } else { self.table_quota }),
            None => true,
        };
        self.bucket > BUCKETS && table_done
    }
}
