//! Toy visual backbone (patch projection + positional grid + tanh), attention
//! pooling, RoI-align and the deterministic toy text encoder.

mod pool;
mod roi;
mod text;
mod visual;

pub use pool::{attention_pool, attention_pool_backward, PoolCache};
pub use roi::{
    region_feature, region_feature_backward, roi_align, roi_align_backward, RegionCache,
    RoiSamples,
};
pub use text::{fnv1a64, TextEncoder, ToyTextEncoder};
pub use visual::{encode_image, encode_image_backward, FeatureMap, Image};
