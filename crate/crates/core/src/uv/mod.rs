//! Deterministic UV-space geometry: textures and masks, the part atlas,
//! projection of photographs into UV space, mirror composition and the
//! body-region partition.

pub mod atlas;
pub mod io;
pub mod ops;
pub mod region;
pub mod texture;

/// Number of foreground body parts in the atlas.
pub const PART_COUNT: usize = 24;

pub use atlas::{Atlas, BodyRegion, FlipAxis, MirrorTable, PartRect};
pub use ops::{
    compose_symmetric, exhaustive_iuv, mask_ground_truth, mirror_texture, occlusion_mask,
    project_to_uv, render_from_uv,
};
pub use region::{build_region_partition, nonzero_bbox, BBox, Region, RegionPartition};
pub use texture::{Image, IuvMap, Mask, TextureMap};
