//! Harmonic Bz and reduced-basis Harmonic Bz conductivity reconstruction for
//! two-dimensional MREIT on the square `[-1, 1]²`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod forward;
pub mod harmonic_bz;
pub mod io;
pub mod mesh;
pub mod phantom;
pub mod rbz;
pub mod reduced_basis;
pub mod render;
pub mod selftest;
pub mod sparse;
pub mod synth;

pub use error::{MreitError, Result};
