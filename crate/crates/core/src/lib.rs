//! Computation over multiple-access channels with OFDM: rate evaluation,
//! sub-function allocation and optimal power allocation.

pub mod combinatorics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod numerics;
pub mod power;
pub mod rates;
pub mod source;

pub use error::{Error, Result};
