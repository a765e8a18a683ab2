// `!(x > 0.0)` guards are deliberate: they reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod eval;
pub mod langevin;
pub mod ndmath;
pub mod partition;
pub mod swdist;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
