//! The super-resolution network.

pub mod config;
pub mod io;
pub mod layers;
pub mod model;

pub use config::{AlignmentMode, NetConfig, Variant};
pub use io::{decode_weights, encode_weights, load_config, load_weights, save_config, save_weights};
pub use model::{param_count, BranchFlows, ForwardStats, PropagationState, SequenceFlows, VsrNet};
