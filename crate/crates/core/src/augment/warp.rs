use ndarray::{Array3, Axis};
use rand::Rng;

use crate::augment::tps::{regular_grid, TpsTransform};
use crate::augment::AugmentConfig;
use crate::error::Result;
use crate::uv::{Atlas, BBox, BodyRegion, Mask, RegionPartition, TextureMap};

/// Sampling positions closer than this (in texels) to a texel centre read that
/// texel exactly.
const SNAP_EPS: f64 = 1e-6;

/// Bilinear read of `crop` (already confined to `bbox`) at texel coordinates
/// `(fy, fx)`; taps outside `bbox` read zero.
fn bilinear_in_box(crop: &Array3<f32>, bbox: &BBox, fy: f64, fx: f64, out: &mut [f32]) {
    let (ry, rx) = (fy.round(), fx.round());
    let (fy, fx) = (
        if (fy - ry).abs() < SNAP_EPS { ry } else { fy },
        if (fx - rx).abs() < SNAP_EPS { rx } else { fx },
    );
    let (y0, x0) = (fy.floor(), fx.floor());
    let (wy, wx) = (fy - y0, fx - x0);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (dy, wyk) in [(0, 1.0 - wy), (1, wy)] {
        for (dx, wxk) in [(0, 1.0 - wx), (1, wx)] {
            let w = wyk * wxk;
            if w == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 as i64 + dy, x0 as i64 + dx);
            if yy < 0 || xx < 0 || !bbox.contains(yy as usize, xx as usize) {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += (w * crop[[yy as usize, xx as usize, c]] as f64) as f32;
            }
        }
    }
}

/// Backward-warps the content of `data ⊙ region_mask` inside `bbox`.
///
/// Coordinates are normalized to the box: `(0, 0)` is the centre of its
/// top-left texel and `(1, 1)` the centre of its bottom-right texel. Each
/// output texel inside the box reads the input at `tps(p)`; everything outside
/// the box is zero.
fn warp_array(
    data: &Array3<f32>,
    region_mask: &Mask,
    bbox: &BBox,
    tps: &TpsTransform,
) -> Array3<f32> {
    let (h, w, ch) = data.dim();
    let mut out = Array3::<f32>::zeros((h, w, ch));
    if bbox.is_empty() {
        return out;
    }
    let mut crop = Array3::<f32>::zeros((h, w, ch));
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let m = region_mask.get(y, x);
            for c in 0..ch {
                crop[[y, x, c]] = data[[y, x, c]] * m;
            }
        }
    }
    let sy = (bbox.height().max(2) - 1) as f64;
    let sx = (bbox.width().max(2) - 1) as f64;
    let mut px = vec![0.0f32; ch];
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let p = [(x - bbox.x0) as f64 / sx, (y - bbox.y0) as f64 / sy];
            let q = tps.apply(p);
            let fx = bbox.x0 as f64 + q[0] * sx;
            let fy = bbox.y0 as f64 + q[1] * sy;
            bilinear_in_box(&crop, bbox, fy, fx, &mut px);
            for c in 0..ch {
                out[[y, x, c]] = px[c];
            }
        }
    }
    out
}

/// Warps one region of `texture` through `tps`, which maps output positions
/// (normalized to `bbox`) to the positions they read from.
pub fn warp_region(
    texture: &TextureMap,
    region_mask: &Mask,
    bbox: &BBox,
    tps: &TpsTransform,
) -> Result<TextureMap> {
    texture.check_mask(region_mask)?;
    TextureMap::from_clamped(warp_array(texture.data(), region_mask, bbox, tps))
}

/// The deformation drawn for one region.
#[derive(Debug, Clone)]
pub struct RegionWarp {
    pub region: BodyRegion,
    /// Padded bounding box the warp operates in.
    pub bbox: BBox,
    /// Backward map: output position → sampled input position.
    pub tps: TpsTransform,
    /// Largest control-point displacement, normalized to the box.
    pub max_shift: f64,
}

/// Draws a random TPS per region: control points on a regular grid over the
/// padded box, each displaced per axis by a magnitude from `U(0, α)` with a
/// random sign.
pub fn sample_region_warps<R: Rng + ?Sized>(
    partition: &RegionPartition,
    atlas: &Atlas,
    alpha: f64,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<RegionWarp>> {
    let size = partition.size();
    let pad = config.padding_texels(atlas, size);
    let grid = regular_grid(config.control_grid);
    let mut warps = Vec::new();
    for region in partition.regions() {
        let Some(bb) = region.bbox else { continue };
        let bbox = bb.padded(pad, size);
        let mut max_shift = 0.0f64;
        let moved: Vec<[f64; 2]> = grid
            .iter()
            .map(|p| {
                let mut q = *p;
                for v in q.iter_mut() {
                    let mag = rng.random::<f64>() * alpha;
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    max_shift = max_shift.max(mag);
                    *v += sign * mag;
                }
                q
            })
            .collect();
        // content at grid[i] moves to moved[i]; the backward map sends moved → grid
        let tps = TpsTransform::fit(&moved, &grid, 0.0)?;
        warps.push(RegionWarp {
            region: region.kind,
            bbox,
            tps,
            max_shift,
        });
    }
    Ok(warps)
}

fn apply_warps(
    data: &Array3<f32>,
    partition: &RegionPartition,
    m_uv: &Mask,
    warps: &[RegionWarp],
) -> Array3<f32> {
    let mut merged = Array3::<f32>::zeros(data.dim());
    for warp in warps {
        let region = partition.region(warp.region);
        let out = if warp.max_shift == 0.0 {
            // f degenerates to the identity
            let mut crop = Array3::<f32>::zeros(data.dim());
            for y in warp.bbox.y0..warp.bbox.y1 {
                for x in warp.bbox.x0..warp.bbox.x1 {
                    for c in 0..data.dim().2 {
                        crop[[y, x, c]] = data[[y, x, c]] * region.mask.get(y, x);
                    }
                }
            }
            crop
        } else {
            warp_array(data, &region.mask, &warp.bbox, &warp.tps)
        };
        merged += &out;
    }
    for mut lane in merged.lanes_mut(Axis(2)) {
        lane.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    for ((y, x, _), v) in merged.indexed_iter_mut() {
        *v *= m_uv.get(y, x);
    }
    merged
}

/// Region-wise TPS deformation of a masked ground-truth texture.
///
/// Every region is cropped by its padded bounding box, warped independently,
/// merged back, and the result is multiplied by `m_uv`.
pub fn region_wise_augment<R: Rng + ?Sized>(
    t: &TextureMap,
    partition: &RegionPartition,
    m_uv: &Mask,
    atlas: &Atlas,
    alpha: f64,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<TextureMap> {
    let warps = sample_region_warps(partition, atlas, alpha, config, rng)?;
    TextureMap::from_clamped(apply_warps(t.data(), partition, m_uv, &warps))
}

/// Same deformation applied to a texture and its validity mask; the mask is
/// re-binarized at 0.5 and the texture re-masked with it.
pub fn region_wise_augment_pair<R: Rng + ?Sized>(
    t: &TextureMap,
    m: &Mask,
    partition: &RegionPartition,
    m_uv: &Mask,
    atlas: &Atlas,
    alpha: f64,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(TextureMap, Mask)> {
    t.check_mask(m)?;
    let warps = sample_region_warps(partition, atlas, alpha, config, rng)?;
    let tex = apply_warps(t.data(), partition, m_uv, &warps);
    let m3 = m.data().clone().insert_axis(Axis(2));
    let mask = apply_warps(&m3, partition, m_uv, &warps).remove_axis(Axis(2));
    let mask = Mask::from_clamped(mask)?.binarized(0.5);
    let tex = TextureMap::from_clamped(tex)?.masked(&mask)?;
    Ok((tex, mask))
}
