//! Minimal define-by-run automatic differentiation for volumetric
//! convolutional networks.
//!
//! Activations are 5-d tensors `(N, C, W, H, L)`. The engine is generic over
//! [`Scalar`] so the same model code runs in `f32` for training and `f64`
//! for finite-difference verification.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use kernels::conv::ConvGeom;
pub use layers::{Conv3d, ConvNormAct, GroupNorm, PRelu, ParamBuilder};
pub use param::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
