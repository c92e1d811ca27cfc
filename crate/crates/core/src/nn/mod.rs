//! Neural-network building blocks on top of candle.

pub mod adam;
pub mod checkpoint;
pub mod extractor;
pub mod gradcheck;
pub mod grid_sample;
pub mod im2col;
pub mod layers;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use extractor::{cosine_feature_distance, FeatureExtractor, RandomConvExtractor};
pub use grid_sample::{grid_sample, identity_grid, texel_center};
pub use params::ParamStore;
