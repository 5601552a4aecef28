#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
mod linalg;
pub mod report;
pub mod rolling;
pub mod special;
pub mod spillover;
pub mod study;
pub mod tlasso;
pub mod var;
pub mod volatility;

pub use error::{Error, Result};
