// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod aopp;
pub mod channel;
pub mod comb;
pub mod config;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod oracle;
pub mod protocol;
pub mod sifting;
pub mod tables;
pub mod validate;

pub use error::{Error, Result};
