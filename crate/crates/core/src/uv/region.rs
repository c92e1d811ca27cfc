use crate::error::{Error, Result};
use crate::uv::atlas::{Atlas, BodyRegion};
use crate::uv::texture::Mask;

/// Axis-aligned texel box, `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn is_empty(&self) -> bool {
        self.y1 <= self.y0 || self.x1 <= self.x0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    /// Grows by `pad` texels on every side, clipped to a `size × size` square.
    pub fn padded(&self, pad: usize, size: usize) -> BBox {
        BBox {
            y0: self.y0.saturating_sub(pad),
            x0: self.x0.saturating_sub(pad),
            y1: (self.y1 + pad).min(size),
            x1: (self.x1 + pad).min(size),
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.y0 < other.y1 && other.y0 < self.y1 && self.x0 < other.x1 && other.x0 < self.x1
    }

    pub fn diagonal(&self) -> f64 {
        ((self.height() as f64).powi(2) + (self.width() as f64).powi(2)).sqrt()
    }
}

/// Tight bounding box of the nonzero texels of a mask.
pub fn nonzero_bbox(mask: &Mask) -> Option<BBox> {
    let mut bb: Option<BBox> = None;
    for ((y, x), &v) in mask.data().indexed_iter() {
        if v > 0.0 {
            let b = bb.get_or_insert(BBox {
                y0: y,
                x0: x,
                y1: y + 1,
                x1: x + 1,
            });
            b.y0 = b.y0.min(y);
            b.x0 = b.x0.min(x);
            b.y1 = b.y1.max(y + 1);
            b.x1 = b.x1.max(x + 1);
        }
    }
    bb
}

#[derive(Debug, Clone)]
pub struct Region {
    pub kind: BodyRegion,
    pub mask: Mask,
    pub weight: f32,
    pub bbox: Option<BBox>,
}

/// The six disjoint region masks whose union is the UV mask.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    regions: Vec<Region>,
}

impl RegionPartition {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, kind: BodyRegion) -> &Region {
        &self.regions[kind.index()]
    }

    pub fn size(&self) -> usize {
        self.regions[0].mask.size()
    }

    pub fn weights(&self) -> [f32; 6] {
        std::array::from_fn(|i| self.regions[i].weight)
    }

    /// Per-texel loss weight `Σ_i w_i · M_i`.
    pub fn weight_map(&self) -> ndarray::Array2<f32> {
        let mut w = ndarray::Array2::zeros((self.size(), self.size()));
        for r in &self.regions {
            w.scaled_add(r.weight, r.mask.data());
        }
        w
    }

    /// Replaces the per-region loss weights, in [`BodyRegion::ALL`] order.
    pub fn with_weights(mut self, weights: [f32; 6]) -> Self {
        for (r, w) in self.regions.iter_mut().zip(weights) {
            r.weight = w;
        }
        self
    }
}

/// Splits `m_uv` into the six body regions defined by the atlas.
pub fn build_region_partition(m_uv: &Mask, atlas: &Atlas) -> Result<RegionPartition> {
    let size = m_uv.size();
    let parts = atlas.part_index_map(size);
    let mut masks: Vec<Mask> = (0..6).map(|_| Mask::zeros(size)).collect();
    for ((y, x), &v) in m_uv.data().indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let p = parts[[y, x]];
        if p == 0 {
            return Err(Error::Config(format!(
                "UV mask texel ({y}, {x}) lies outside every atlas part"
            )));
        }
        masks[atlas.region_of(p).index()].set(y, x, v);
    }
    let regions = BodyRegion::ALL
        .iter()
        .zip(masks)
        .map(|(&kind, mask)| Region {
            kind,
            bbox: nonzero_bbox(&mask),
            mask,
            weight: kind.loss_weight(),
        })
        .collect();
    Ok(RegionPartition { regions })
}
