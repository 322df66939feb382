#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod frames;
pub mod io;
pub mod parallel;
pub mod ssop;
pub mod study;

pub use error::{Error, Result};
