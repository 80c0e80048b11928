//! Mean field equilibrium of the proof-of-work mining game.

// `!(x > 0.0)` style checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod fokker_planck;
pub mod grid;
pub mod hjb;
pub mod market;
pub mod montecarlo;
pub mod protocol;

pub use error::{Error, Result};
