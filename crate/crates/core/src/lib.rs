//! Order-free recurrent multi-label classification with soft visual attention.

pub mod autodiff;
pub mod data;
pub mod decode;
pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
mod wire;

pub use error::{Error, Result};
pub use tensor::Tensor;
