//! Laboratory for comparing dense and generative retrieval on synthetic and
//! small text worlds.

// Validation uses `!(x > 0.0)` style guards on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod docid;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gr;
pub mod inputs;
pub mod numerics;
pub mod theory;
pub mod world;

pub use error::{LabError, Result};
