#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod augment;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod nn;
pub mod refiner;
pub mod sampler;
pub mod train;
pub mod uv;

pub use error::{Error, Result};
