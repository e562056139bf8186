//! STAR-RIS aided NOMA downlink under mode switching: channel model,
//! statistical design of the surface, short-term power allocation and
//! Monte-Carlo evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::single_range_in_vec_init, clippy::needless_range_loop)]

pub mod channel;
pub mod benchmarks;
pub mod bte;
pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod noma;
pub mod pte;
pub mod sca;
pub mod stats;

pub use error::{CoreError, Result};
