//! Exact integer and rational arithmetic.

mod int;
mod nat;
mod rational;

pub use int::{MultiWordInt, Sign};
pub use nat::Nat;
pub use rational::{dyadic_round, DyadicApprox, Rational};

pub(crate) use nat::cmp_limbs;
