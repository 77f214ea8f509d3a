//! Small CPU autodiff engine for the convolutional networks used by the
//! synthesis pipeline.
//!
//! Everything runs in `f64` so that analytic gradients can be checked against
//! central finite differences at tight tolerances.

mod adam;
mod error;
mod graph;
pub mod init;
pub mod kernels;
mod params;
mod tensor;

pub use adam::Adam;
pub use error::{NnError, Result};
pub use graph::{sigmoid, Gradients, Graph, NodeId};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;
