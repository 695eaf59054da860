//! Video super-resolution with second-order grid propagation and
//! flow-guided deformable alignment, built on a small dense-tensor stack
//! with its own reverse-mode autodiff.

pub mod error;
pub mod kernels;
pub mod parallel;
pub mod scalar;
pub mod tensor;

pub use error::{Result, VsrError};
pub use scalar::Scalar;
pub use tensor::{ConvSpec, Tensor};
pub mod autodiff;
pub mod flow;
pub mod weights;

pub use autodiff::{Gradients, Graph, Var};
pub use weights::ModelWeights;
pub mod align;
pub mod net;

pub use net::{AlignmentMode, NetConfig, Variant, VsrNet};
pub mod data;

pub use data::Clip;
pub mod experiment;
pub mod train;
