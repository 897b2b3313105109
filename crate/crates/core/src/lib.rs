//! A differentiable feature-pyramid neck that aligns features in both
//! directions: grouped-aggregation laterals, a bottom-up spatial alignment
//! path built on space-to-depth downsampling and modulated deformable
//! convolution, and a top-down channel/pixel-gated semantic fusion path.
//!
//! Everything runs on a small reverse-mode autograd engine ([`tensor`]) and is
//! checked against brute-force references ([`reference`]) and central
//! differences ([`gradcheck`]).

pub mod error;
pub mod galm;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod optim;
pub mod param;
pub mod pyramid;
pub mod reference;
pub mod seam;
pub mod synth;
pub mod spam;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use param::{Module, ParamFactory, Parameter};
pub use tensor::{backward, DType, Element, Gradients, Tensor};
