//! Command-line harness for OBF-ARX regret, bias and diffusion studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod output;
pub mod run;
