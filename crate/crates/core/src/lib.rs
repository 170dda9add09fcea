pub mod arith;
pub mod bg;
pub mod error;
pub mod halt;
pub mod item;
pub mod perf;
pub mod random;
pub mod samplers;
pub mod sort_reduction;
pub mod sorted_set;
pub mod verify;

pub use arith::{dyadic_round, DyadicApprox, MultiWordInt, Nat, Rational, Sign};
pub use bg::{BgStructure, Classification};
pub use error::{Error, Result};
pub use halt::{Halt, HaltConfig, HaltParams, LookupTable, RebuildMode};
pub use item::{expected_size, read_items, write_items, Item, QueryParams, TotalWeight};
pub use random::{LazyUniform, RandomSource};
pub use sort_reduction::{sort_via_dpss, ReferenceFloatDpss, SortStats};
