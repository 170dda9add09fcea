//! Static table for the special subset sampling problem: `K` slots, slot `s`
//! holding `c_s in [0, m]` items and selected with probability
//! `min(1, 2^(s+1) c_s / m^2)`.
//!
//! Each configuration owns a row of `(m^2)^K` cells; a result bitmask `r`
//! occupies exactly `Pr(r) (m^2)^K` of them, so one uniform cell index
//! samples the slot set exactly.

use crate::arith::Rational;
use crate::error::{invalid, Error, Result};
use crate::random::RandomSource;

/// Largest supported slot count (results are stored as `u8` bitmasks).
pub const MAX_SLOTS: usize = 8;

#[derive(Clone, Debug)]
pub struct LookupTable {
    k: usize,
    m: u32,
    cells_per_row: u64,
    cells: Vec<u8>,
}

/// `(m + 1)^K (m^2)^K K`, saturating.
pub fn table_bits(k: usize, m: u32) -> u128 {
    let per = (m as u128 + 1).saturating_mul(m as u128 * m as u128);
    (0..k).fold(1u128, |acc, _| acc.saturating_mul(per)).saturating_mul(k as u128)
}

impl LookupTable {
    pub fn build(k: usize, m: u32) -> Result<Self> {
        Self::build_with_budget(k, m, u128::MAX)
    }

    pub fn build_with_budget(k: usize, m: u32, budget_bits: u128) -> Result<Self> {
        let mut b = TableBuilder::new(k, m, budget_bits)?;
        while !b.step(usize::MAX) {}
        Ok(b.finish())
    }

    /// Empty table answering nothing; used when no slot fits the budget.
    pub fn empty(m: u32) -> Self {
        LookupTable { k: 0, m, cells_per_row: 1, cells: vec![0] }
    }

    #[inline]
    pub fn slots(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn rows(&self) -> usize {
        (self.m as usize + 1).pow(self.k as u32)
    }

    pub fn cells_per_row(&self) -> u64 {
        self.cells_per_row
    }

    /// Row of a configuration read as a base-`(m+1)` number, slot 1 lowest.
    pub fn row_index(&self, config: &[u8]) -> Result<usize> {
        if config.len() != self.k {
            return Err(invalid(format!("configuration has {} slots, table has {}", config.len(), self.k)));
        }
        let mut row = 0usize;
        for &c in config.iter().rev() {
            if c as u32 > self.m {
                return Err(invalid(format!("slot count {c} exceeds m = {}", self.m)));
            }
            row = row * (self.m as usize + 1) + c as usize;
        }
        Ok(row)
    }

    pub fn row_cells(&self, row: usize) -> &[u8] {
        let n = self.cells_per_row as usize;
        &self.cells[row * n..(row + 1) * n]
    }

    /// Result bitmask (bit `s - 1` for slot `s`) for a configuration.
    pub fn sample(&self, config: &[u8], src: &mut RandomSource) -> Result<u8> {
        let row = self.row_index(config)?;
        Ok(self.sample_row(row, src))
    }

    #[inline]
    pub(crate) fn sample_row(&self, row: usize, src: &mut RandomSource) -> u8 {
        let cell = src.below(self.cells_per_row) as usize;
        self.cells[row * self.cells_per_row as usize + cell]
    }

    pub fn heap_bytes(&self) -> usize {
        self.cells.capacity()
    }
}

/// Builds a table a bounded number of cells at a time.
#[derive(Clone, Debug)]
pub struct TableBuilder {
    k: usize,
    m: u32,
    rows: u64,
    done_rows: u64,
    config: Vec<u32>,
    cells: Vec<u8>,
}

impl TableBuilder {
    pub fn new(k: usize, m: u32, budget_bits: u128) -> Result<Self> {
        if k > MAX_SLOTS {
            return Err(invalid(format!("at most {MAX_SLOTS} slots supported, got {k}")));
        }
        if !(2..=255).contains(&m) {
            return Err(invalid(format!("m must be in [2, 255], got {m}")));
        }
        let needed_bits = table_bits(k, m);
        if needed_bits > budget_bits {
            return Err(Error::TableTooLarge { needed_bits, budget_bits });
        }
        let rows = (m as u64 + 1).pow(k as u32);
        let total = usize::try_from(rows * (m as u64 * m as u64).pow(k as u32))
            .map_err(|_| Error::TableTooLarge { needed_bits, budget_bits })?;
        Ok(TableBuilder { k, m, rows, done_rows: 0, config: vec![0; k], cells: Vec::with_capacity(total) })
    }

    pub fn total_cells(&self) -> usize {
        self.cells.capacity()
    }

    /// Fills whole rows until at least `quota` cells were written. Returns
    /// whether the table is complete.
    pub fn step(&mut self, quota: usize) -> bool {
        let start = self.cells.len();
        while self.done_rows < self.rows && self.cells.len() - start < quota {
            fill_row(&mut self.cells, &self.config, self.m);
            for c in self.config.iter_mut() {
                *c += 1;
                if *c <= self.m {
                    break;
                }
                *c = 0;
            }
            self.done_rows += 1;
        }
        self.done_rows == self.rows
    }

    pub fn finish(self) -> LookupTable {
        assert_eq!(self.done_rows, self.rows, "table finished before all rows were filled");
        let cells_per_row = (self.m as u64 * self.m as u64).pow(self.k as u32);
        LookupTable { k: self.k, m: self.m, cells_per_row, cells: self.cells }
    }
}

fn fill_row(cells: &mut Vec<u8>, config: &[u32], m: u32) {
    let m2 = m as u64 * m as u64;
    let p: Vec<u64> = (0..config.len()).map(|i| slot_numerator(i + 1, config[i], m)).collect();
    for r in 0..(1u32 << config.len()) {
        let mult: u64 = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| if r >> i & 1 == 1 { pi } else { m2 - pi })
            .product();
        cells.extend(std::iter::repeat(r as u8).take(mult as usize));
    }
}

/// `min(m^2, 2^(s+1) c)`: slot probability times `m^2`.
#[inline]
pub(crate) fn slot_numerator(s: usize, c: u32, m: u32) -> u64 {
    ((c as u64) << (s + 1)).min(m as u64 * m as u64)
}

/// Exact `min(1, 2^(s+1) c / m^2)`.
pub fn slot_probability(s: usize, c: u32, m: u32) -> Rational {
    Rational::ratio(slot_numerator(s, c, m), m as u64 * m as u64).expect("m >= 2")
}

/// Exact `Pr(r)` for a configuration.
pub fn result_probability(config: &[u8], r: u8, m: u32) -> Rational {
    let mut acc = Rational::one();
    for (i, &c) in config.iter().enumerate() {
        let p = slot_probability(i + 1, c as u32, m);
        acc = acc.mul(&if r >> i & 1 == 1 { p } else { Rational::one().sub(&p) });
    }
    acc
}

/// `m = max(2, ceil(log2 ceil(log2 max(n0, 2))))`.
pub fn table_m(n0: usize) -> u32 {
    let lg = ceil_log2(n0.max(2) as u64);
    ceil_log2(lg as u64).max(2)
}

/// Slots needed to cover the middle range: `max(1, ceil(2 log2 m))`.
pub fn full_slots(m: u32) -> usize {
    // ceil(2 log2 m) = ceil(log2 m^2)
    (ceil_log2(m as u64 * m as u64) as usize).max(1)
}

/// Largest slot count within `full_slots(m)` whose table fits the budget.
pub fn fitting_slots(m: u32, budget_bits: u128) -> usize {
    (0..=full_slots(m).min(MAX_SLOTS)).rev().find(|&k| k == 0 || table_bits(k, m) <= budget_bits).unwrap_or(0)
}

fn ceil_log2(v: u64) -> u32 {
    if v <= 1 {
        0
    } else {
        64 - (v - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn multiplicity(t: &LookupTable, row: usize, r: u8) -> u64 {
        t.row_cells(row).iter().filter(|&&c| c == r).count() as u64
    }

    #[test]
    fn small_table_examples() {
        let t = LookupTable::build(2, 2).unwrap();
        assert_eq!(t.cells_per_row(), 16);
        assert!(t.row_cells(t.row_index(&[0, 0]).unwrap()).iter().all(|&c| c == 0));
        assert!(t.row_cells(t.row_index(&[1, 2]).unwrap()).iter().all(|&c| c == 0b11));
        let row = t.row_index(&[1, 1]).unwrap();
        // p1 = 1, p2 = min(1, 8/4) = 1 as well.
        assert_eq!(multiplicity(&t, row, 0b11), 16);
        let t1 = LookupTable::build(1, 2).unwrap();
        assert!(t1.row_cells(t1.row_index(&[1]).unwrap()).iter().all(|&c| c == 1));
        assert!(t.row_index(&[3, 0]).is_err());
        assert!(t.row_index(&[1]).is_err());
    }

    #[test]
    fn rows_have_exact_multiplicities() {
        for (k, m) in [(1, 2), (2, 2), (2, 3), (3, 3), (2, 5), (3, 4)] {
            let t = LookupTable::build(k, m).unwrap();
            let total = t.cells_per_row();
            for row in 0..t.rows() {
                let mut config = vec![0u8; k];
                let mut rem = row;
                for c in config.iter_mut() {
                    *c = (rem % (m as usize + 1)) as u8;
                    rem /= m as usize + 1;
                }
                for r in 0..(1u8 << k) {
                    let expected = result_probability(&config, r, m).mul(&Rational::from(total));
                    assert_eq!(Rational::from(multiplicity(&t, row, r)), expected, "k={k} m={m} {config:?} r={r}");
                    if (0..k).any(|i| config[i] == 0 && r >> i & 1 == 1) {
                        assert_eq!(multiplicity(&t, row, r), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_choices() {
        assert_eq!(table_m(10_000), 4);
        assert_eq!(table_m(1_000_000), 5);
        assert_eq!(table_m(64), 3);
        assert_eq!(table_m(1), 2);
        assert_eq!(full_slots(4), 4);
        assert_eq!(full_slots(5), 5);
        assert_eq!(fitting_slots(4, 4 * 10_000 * 64), 3);
        assert_eq!(fitting_slots(5, 4 * 1_000_000 * 64), 3);
        assert!(matches!(LookupTable::build_with_budget(3, 4, 1000), Err(Error::TableTooLarge { .. })));
    }

    #[test]
    fn sampling_frequencies() {
        let t = LookupTable::build(2, 3).unwrap();
        let config = [1u8, 1];
        let mut src = RandomSource::new(5);
        let trials = 200_000;
        let mut counts = [0u32; 4];
        for _ in 0..trials {
            counts[t.sample(&config, &mut src).unwrap() as usize] += 1;
        }
        for r in 0..4u8 {
            let p = result_probability(&config, r, 3).to_f64();
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((counts[r as usize] as f64 / trials as f64 - p).abs() <= 5.0 * sd + 1e-12);
        }
    }
}
