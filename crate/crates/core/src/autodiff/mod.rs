//! Reverse-mode differentiation, loss and optimization.

pub mod graph;
pub mod loss;
pub mod optim;

pub use graph::{Gradients, Graph, Var};
pub use loss::{charbonnier_loss, DEFAULT_CHARBONNIER_EPS};
pub use optim::{cosine_lr, freeze_flow, AdamConfig, GroupLrs, OptimizerState, ParamGroup, FLOW_PREFIX};
