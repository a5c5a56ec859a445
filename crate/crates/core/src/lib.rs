//! Large-margin neural feature maps and margin-based generalization bounds.

pub mod diffcore;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod model;
pub mod loss;
pub mod gradcheck;
pub mod optim;
pub mod data;
pub mod bounds;
pub mod verify;
pub mod harness;
