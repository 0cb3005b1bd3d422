//! Sequence-to-sequence translation with a memory-enhanced decoder.
//!
//! A bidirectional GRU encoder produces one annotation per source word. The
//! decoder keeps a vector-state plus an `n x m` buffer memory that it reads
//! before and writes after each state update, both through content-based
//! addressing. All gradients come from the small reverse-mode engine in
//! [`autodiff`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod predictor;
pub mod trainer;

pub use error::{Error, Result};
