//! Neural building blocks: convolution, residual groups, unfold/fold,
//! bicubic resampling and sub-pixel upsampling.

pub mod conv;
pub mod layers;
pub mod params;
pub mod resample;
pub mod unfold;
pub mod upsample;

pub use conv::{conv2d_backward, conv2d_forward, ConvSpec};
pub use layers::{Conv2d, ResBlock, ResidualGroup, LEAKY_SLOPE};
pub use params::{Bound, Init, ParamId, ParamStore};
pub use resample::{bicubic_resize, Filter, Resampler, Resize};
pub use unfold::{fold, overlap_counts, unfold3x3};
pub use upsample::{depth_to_space, space_to_depth, SubPixelUpsampler};
