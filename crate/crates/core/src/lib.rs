#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numeric;
pub mod tailmodels;
pub mod rng;
pub mod stats;
pub mod iskernel;
pub mod recursion;
pub mod estimators;
pub mod cli;
