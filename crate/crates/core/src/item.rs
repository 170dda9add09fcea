//! Items, query parameters and the tab-separated item file format.

use std::fmt;
use std::io::{BufRead, Write};

use crate::arith::{MultiWordInt, Nat, Rational};
use crate::error::{invalid, Error, Result};

/// Largest weight accepted from item files.
pub const MAX_FILE_WEIGHT: u64 = (1 << 63) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Item {
    pub id: u64,
    pub weight: u64,
}

impl Item {
    pub fn new(id: u64, weight: u64) -> Self {
        Item { id, weight }
    }
}

/// The pair `(alpha, beta)`: a query includes each item independently with
/// probability `min(1, w / (alpha * total + beta))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryParams {
    alpha: Rational,
    beta: Rational,
}

impl QueryParams {
    pub fn new(alpha: Rational, beta: Rational) -> Result<Self> {
        if alpha.is_negative() || beta.is_negative() {
            return Err(invalid("alpha and beta must be non-negative"));
        }
        Ok(QueryParams { alpha, beta })
    }

    /// Convenience constructor from `alpha = an / ad`, `beta = bn / bd`.
    pub fn from_ratios(an: u64, ad: u64, bn: u64, bd: u64) -> Result<Self> {
        QueryParams::new(Rational::ratio(an, ad)?, Rational::ratio(bn, bd)?)
    }

    pub fn alpha(&self) -> &Rational {
        &self.alpha
    }

    pub fn beta(&self) -> &Rational {
        &self.beta
    }

    /// `alpha * total + beta`.
    pub fn total_weight(&self, total: u128) -> Rational {
        self.alpha.mul(&Rational::from_int(MultiWordInt::from(total))).add(&self.beta)
    }
}

impl fmt::Display for QueryParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={} beta={}", self.alpha, self.beta)
    }
}

/// A positive parameterized total weight `W = num / den` and the logarithms
/// every level of a query needs.
#[derive(Clone, Debug)]
pub struct TotalWeight {
    pub(crate) num: Nat,
    pub(crate) den: Nat,
    pub(crate) floor_log: i64,
    pub(crate) ceil_log: i64,
}

impl TotalWeight {
    pub fn new(w: &Rational) -> Result<Self> {
        if !w.is_positive() {
            return Err(Error::DegenerateQuery);
        }
        Ok(TotalWeight {
            num: w.numer().magnitude().clone(),
            den: w.denom().magnitude().clone(),
            floor_log: w.floor_log2()?,
            ceil_log: w.ceil_log2()?,
        })
    }

    pub fn from_params(params: &QueryParams, total: u128) -> Result<Self> {
        TotalWeight::new(&params.total_weight(total))
    }

    pub fn value(&self) -> Rational {
        Rational::from_nats(self.num.clone(), self.den.clone()).expect("positive denominator")
    }

    /// `floor(log2(W / d))` for a positive integer `d`.
    pub fn floor_log2_div(&self, d: u64) -> i64 {
        let scaled = self.den.mul_u64(d);
        let c = self.num.bit_len() as i64 - scaled.bit_len() as i64;
        let fits = if c >= 0 { scaled.shl(c as u64) <= self.num } else { scaled <= self.num.shl(c.unsigned_abs()) };
        if fits {
            c
        } else {
            c - 1
        }
    }

    /// Exact inclusion probability `min(1, w / W)`.
    pub fn probability(&self, w: u128) -> Rational {
        let a = self.den.mul_u128(w);
        if a >= self.num {
            Rational::one()
        } else {
            Rational::from_nats(a, self.num.clone()).expect("W > 0")
        }
    }
}

/// Exact expected sample size `sum_x min(1, w(x) / W)`.
pub fn expected_size(weights: impl IntoIterator<Item = u64>, w: &TotalWeight) -> Rational {
    let mut small = Nat::zero();
    let mut certain = 0u64;
    for x in weights {
        if w.den.mul_u64(x) >= w.num {
            certain += 1;
        } else {
            small = small.add_u64(x);
        }
    }
    let num = small.mul(&w.den).add(&w.num.mul_u64(certain));
    Rational::from_nats(num, w.num.clone()).expect("W > 0")
}

/// Reads `<id>\t<weight>` lines; blank lines and `#` comments are skipped.
pub fn read_items(reader: impl BufRead) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, weight) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected <id><TAB><weight>".into()))?;
        let id: u64 = id.trim().parse().map_err(|_| parse_err(format!("bad id {id:?}")))?;
        let weight: u64 =
            weight.trim().parse().map_err(|_| parse_err(format!("bad weight {weight:?}")))?;
        if weight > MAX_FILE_WEIGHT {
            return Err(parse_err(format!("weight {weight} must be below 2^63")));
        }
        if !seen.insert(id) {
            return Err(parse_err(format!("duplicate id {id}")));
        }
        items.push(Item { id, weight });
    }
    Ok(items)
}

pub fn write_items(mut out: impl Write, items: &[Item]) -> std::io::Result<()> {
    for it in items {
        writeln!(out, "{}\t{}", it.id, it.weight)?;
    }
    Ok(())
}
