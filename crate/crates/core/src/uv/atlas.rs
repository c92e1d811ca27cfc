//! Part layout of the UV square and the left/right mirror table.
//!
//! The shipped layout lives in `fixtures/atlas.toml`; see that file for the
//! format. All geometry is resolved per texture resolution, so one atlas
//! serves every training and inference size.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uv::texture::Mask;
use crate::uv::PART_COUNT;

pub const ATLAS_FORMAT_VERSION: u32 = 1;

const DEFAULT_ATLAS: &str = include_str!("../../fixtures/atlas.toml");

/// The six body regions used for region-wise augmentation and loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyRegion {
    Head,
    Body,
    Legs,
    Arms,
    Feet,
    Hands,
}

impl BodyRegion {
    pub const ALL: [BodyRegion; 6] = [
        BodyRegion::Head,
        BodyRegion::Body,
        BodyRegion::Legs,
        BodyRegion::Arms,
        BodyRegion::Feet,
        BodyRegion::Hands,
    ];

    /// Reconstruction-loss weight; the face/head region counts six times.
    pub fn loss_weight(self) -> f32 {
        match self {
            BodyRegion::Head => 6.0,
            _ => 1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyRegion::Head => "head",
            BodyRegion::Body => "body",
            BodyRegion::Legs => "legs",
            BodyRegion::Arms => "arms",
            BodyRegion::Feet => "feet",
            BodyRegion::Hands => "hands",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    U,
    V,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartEntry {
    index: u8,
    name: String,
    group: Option<BodyRegion>,
    cell: [usize; 2],
    mirror: u8,
    flip: FlipAxis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AtlasFile {
    version: u32,
    columns: usize,
    rows: usize,
    gutter: f64,
    part: Vec<PartEntry>,
}

/// Texel rectangle of one part at a given resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PartRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

#[derive(Debug, Clone)]
pub struct PartInfo {
    pub index: u8,
    pub name: String,
    pub region: BodyRegion,
    pub cell: (usize, usize),
}

/// Part index → mirrored part index plus the in-rectangle flip rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorTable {
    partner: [u8; PART_COUNT + 1],
    flip: [FlipAxis; PART_COUNT + 1],
}

impl MirrorTable {
    pub fn new(pairs: &[(u8, u8, FlipAxis)]) -> Result<Self> {
        let mut partner = [0u8; PART_COUNT + 1];
        let mut flip = [FlipAxis::None; PART_COUNT + 1];
        for &(p, q, f) in pairs {
            let (pi, qi) = (p as usize, q as usize);
            if pi == 0 || pi > PART_COUNT || qi == 0 || qi > PART_COUNT {
                return Err(Error::Config(format!(
                    "mirror entry {p} -> {q} out of range"
                )));
            }
            partner[pi] = q;
            flip[pi] = f;
        }
        let table = Self { partner, flip };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for p in 1..=PART_COUNT {
            let q = self.partner[p] as usize;
            if q == 0 {
                return Err(Error::Config(format!("part {p} has no mirror entry")));
            }
            if self.partner[q] as usize != p {
                return Err(Error::Config(format!(
                    "mirror table is not involutive: {p} -> {q} -> {}",
                    self.partner[q]
                )));
            }
            if self.flip[q] != self.flip[p] {
                return Err(Error::Config(format!(
                    "parts {p} and {q} disagree on their flip axis"
                )));
            }
        }
        Ok(())
    }

    pub fn partner(&self, part: u8) -> u8 {
        self.partner[part as usize]
    }

    pub fn flip(&self, part: u8) -> FlipAxis {
        self.flip[part as usize]
    }

    pub fn is_involutive(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Fixed layout of the 24 body parts inside the UV square.
#[derive(Debug, Clone)]
pub struct Atlas {
    columns: usize,
    rows: usize,
    gutter: f64,
    parts: Vec<PartInfo>,
    mirror: MirrorTable,
}

impl Atlas {
    /// The layout shipped with the crate.
    pub fn standard() -> Self {
        Self::from_toml_str(DEFAULT_ATLAS).expect("bundled atlas fixture is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: AtlasFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("atlas: {e}")))?;
        if file.version != ATLAS_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "atlas version {} unsupported (expected {ATLAS_FORMAT_VERSION})",
                file.version
            )));
        }
        if file.columns * file.rows < PART_COUNT {
            return Err(Error::Config(
                "atlas grid has fewer cells than parts".into(),
            ));
        }
        if !(0.0..0.25).contains(&file.gutter) {
            return Err(Error::Config(format!(
                "atlas gutter {} invalid",
                file.gutter
            )));
        }
        let mut seen = [false; PART_COUNT + 1];
        let mut cells = std::collections::HashSet::new();
        let mut parts = Vec::with_capacity(PART_COUNT);
        let mut pairs = Vec::with_capacity(PART_COUNT);
        for entry in &file.part {
            let i = entry.index as usize;
            if i == 0 || i > PART_COUNT {
                return Err(Error::Config(format!("part index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("part {i} listed twice")));
            }
            let region = entry.group.ok_or_else(|| {
                Error::Config(format!(
                    "part {i} ({}) is assigned to no region",
                    entry.name
                ))
            })?;
            let [c, r] = entry.cell;
            if c >= file.columns || r >= file.rows || !cells.insert((c, r)) {
                return Err(Error::Config(format!(
                    "part {i} has an invalid cell {c},{r}"
                )));
            }
            parts.push(PartInfo {
                index: entry.index,
                name: entry.name.clone(),
                region,
                cell: (c, r),
            });
            pairs.push((entry.index, entry.mirror, entry.flip));
        }
        if let Some(missing) = (1..=PART_COUNT).find(|&i| !seen[i]) {
            return Err(Error::Config(format!("part {missing} missing from atlas")));
        }
        parts.sort_by_key(|p| p.index);
        Ok(Self {
            columns: file.columns,
            rows: file.rows,
            gutter: file.gutter,
            parts,
            mirror: MirrorTable::new(&pairs)?,
        })
    }

    pub fn mirror_table(&self) -> &MirrorTable {
        &self.mirror
    }

    pub fn parts(&self) -> &[PartInfo] {
        &self.parts
    }

    pub fn part(&self, index: u8) -> &PartInfo {
        &self.parts[index as usize - 1]
    }

    pub fn region_of(&self, part: u8) -> BodyRegion {
        self.part(part).region
    }

    /// Gutter width in texels at the given resolution.
    pub fn gutter_texels(&self, size: usize) -> usize {
        (self.gutter * size as f64).round() as usize
    }

    pub fn rect(&self, part: u8, size: usize) -> PartRect {
        let (c, r) = self.part(part).cell;
        let cw = size / self.columns;
        let ch = size / self.rows;
        let g = self.gutter_texels(size);
        PartRect {
            x0: c * cw + g,
            y0: r * ch + g,
            width: cw.saturating_sub(2 * g).max(1),
            height: ch.saturating_sub(2 * g).max(1),
        }
    }

    /// Nearest texel addressed by `(part, u, v)`; `u` runs along x, `v` along y.
    pub fn texel_of(&self, part: u8, u: f32, v: f32, size: usize) -> (usize, usize) {
        let r = self.rect(part, size);
        let x = (u.clamp(0.0, 1.0) * (r.width - 1) as f32).round() as usize;
        let y = (v.clamp(0.0, 1.0) * (r.height - 1) as f32).round() as usize;
        (r.y0 + y, r.x0 + x)
    }

    /// `(u, v)` of the centre of texel `(y, x)` inside `part`.
    pub fn uv_of_texel(&self, part: u8, y: usize, x: usize, size: usize) -> (f32, f32) {
        let r = self.rect(part, size);
        let u = if r.width > 1 {
            (x - r.x0) as f32 / (r.width - 1) as f32
        } else {
            0.0
        };
        let v = if r.height > 1 {
            (y - r.y0) as f32 / (r.height - 1) as f32
        } else {
            0.0
        };
        (u, v)
    }

    /// Per-texel part index (0 outside every part rectangle).
    pub fn part_index_map(&self, size: usize) -> Array2<u8> {
        let mut map = Array2::zeros((size, size));
        for p in &self.parts {
            let r = self.rect(p.index, size);
            for y in r.y0..r.y0 + r.height {
                for x in r.x0..r.x0 + r.width {
                    map[[y, x]] = p.index;
                }
            }
        }
        map
    }

    /// Binary mask of texels that belong to some body part.
    pub fn uv_mask(&self, size: usize) -> Mask {
        let map = self.part_index_map(size);
        Mask::new(map.mapv(|p| if p > 0 { 1.0 } else { 0.0 })).expect("binary mask")
    }

    /// Texel that `(y, x)` of `part` maps onto in the mirrored part.
    pub fn mirror_texel(&self, part: u8, y: usize, x: usize, size: usize) -> (u8, usize, usize) {
        let q = self.mirror.partner(part);
        let src = self.rect(part, size);
        let dst = self.rect(q, size);
        let (mut dx, mut dy) = (x - src.x0, y - src.y0);
        match self.mirror.flip(part) {
            FlipAxis::U => dx = src.width - 1 - dx,
            FlipAxis::V => dy = src.height - 1 - dy,
            FlipAxis::None => {}
        }
        (q, dst.y0 + dy, dst.x0 + dx)
    }
}
