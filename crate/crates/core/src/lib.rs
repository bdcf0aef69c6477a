#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod projection;
pub mod report;
pub mod tensor;
pub mod training;

pub use autodiff::{Activation, Graph, Var};
pub use error::{PanError, Result};
pub use tensor::Tensor;
