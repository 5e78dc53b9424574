// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion_bench;
pub mod error;
pub mod experiment;
pub mod gobf;
pub mod linalg;
pub mod lti;
pub mod obf_arx;
pub mod regret;
pub mod rng;
pub mod serde_matrix;

pub use error::{Error, Result};
