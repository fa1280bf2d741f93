//! Dense tensors generic over `f32`/`f64` and a small reverse-mode
//! autodiff tape with the operations needed by convolutional
//! frame-synthesis networks.

mod error;
pub mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod scalar;
mod tensor;

pub use error::TensorError;
pub use graph::{Backward, Gradients, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
