//! The step-1 fusion network: sensor branches, shared block and heads.

pub mod checkpoint;
mod encoders;
mod fusion;
mod normalize;

pub use encoders::{OpticalEncoder, SarCache, SarEncoder, SarWidths, SharedBlock, SharedCache};
pub use fusion::{
    argmax_classes, water_fraction_from_map, Branch, EmbeddingTensor, EncodeCache, EncoderConfig, FusionModel,
    ParamGroup, SegmentationCache, LEAKY_SLOPE,
};
pub use normalize::{ChannelStats, Normalization};
