//! Forward kernels and their hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod deform;
pub mod sample;
pub mod shuffle;

pub use activation::{leaky_relu, relu, sigmoid, DEFAULT_LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads};
pub use deform::{deform_conv2d, deform_conv2d_backward, mask_channel, offset_channel, DeformGrads};
pub use sample::{
    bilinear_sample, bilinear_sample_backward, identity_grid, resize_bilinear, resize_bilinear_backward, warp,
    warp_backward,
};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
