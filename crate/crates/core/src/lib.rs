//! Doubly robust test of Granger non-causality in conditional distribution.

pub mod bootstrap;
pub mod dgp;
pub mod drstat;
pub mod error;
pub mod harness;
pub mod lagcore;
pub mod mdn;
pub mod mlp;
pub mod net;
pub mod seed;

pub use error::{Error, ErrorClass, Result};
