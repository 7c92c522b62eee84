// Validation is written as `!(x > 0.0)` throughout so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod synth;
pub mod target_aware;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};
pub use tensor::{ConvKernel, Tensor3};
pub use tracker::BBox;
