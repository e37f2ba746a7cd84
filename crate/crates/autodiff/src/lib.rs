//! Reverse-mode differentiation over dense `f64` tensors, with the layers,
//! losses and optimizer needed by the connectivity harmonizers.

pub mod cheb;
pub mod error;
mod gemm;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use cheb::{chebconv, RescaledLaplacian};
pub use error::{Error, Result};
pub use graph::{sigmoid, BatchNormMode, Graph, Var};
pub use optim::{Adam, PlateauScheduler};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
