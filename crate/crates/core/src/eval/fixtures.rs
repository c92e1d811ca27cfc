//! Procedural fixture generation: garment-like textures, visibility masks,
//! normal maps, coverage IUV maps, rendered views and estimator textures.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{region_wise_augment_pair, AugmentConfig};
use crate::curriculum::{
    synthesize_visibility, synthesize_with_coverage, FixtureSet, MaskSynthConfig,
};
use crate::error::{Error, Result};
use crate::sampler::NormalMap;
use crate::uv::io::{save_image, save_iuv, save_mask, save_texture};
use crate::uv::{
    build_region_partition, exhaustive_iuv, render_from_uv, Atlas, BodyRegion, IuvMap, Mask,
    TextureMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Also write misaligned estimator textures under `densepose/`.
    pub densepose: bool,
    /// Warp strength of the estimator textures.
    pub densepose_alpha: f64,
    /// Fixed visible fraction per region; random visibility when absent.
    pub coverage: Option<f64>,
    pub visibility: MaskSynthConfig,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            count: 10,
            resolution: 64,
            seed: 0,
            densepose: false,
            densepose_alpha: 0.2,
            coverage: None,
            visibility: MaskSynthConfig::default(),
        }
    }
}

impl FixtureSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("fixture spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("fixture count must be positive".into()));
        }
        if self.resolution < 32 || !self.resolution.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "fixture resolution {} must be a positive multiple of 32",
                self.resolution
            )));
        }
        if let Some(c) = self.coverage {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config(format!("coverage {c} outside [0, 1]")));
            }
        }
        self.visibility.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub texture: String,
    pub mask: String,
    pub normal: String,
    pub iuv: String,
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densepose: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densepose_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec: FixtureSpec,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// One generated sample, in memory.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub id: String,
    pub texture: TextureMap,
    pub mask: Mask,
    pub normal: NormalMap,
    /// Pixel `(y, x)` addresses texel `(y, x)`; background where the mask is 0.
    pub iuv: IuvMap,
    pub image: crate::uv::Image,
    pub densepose: Option<(TextureMap, Mask)>,
}

struct Palette {
    top: [f32; 3],
    top_alt: [f32; 3],
    bottom: [f32; 3],
    skin: [f32; 3],
    hair: [f32; 3],
    shoes: [f32; 3],
    logo: [[f32; 3]; 2],
    stripe_period: f32,
    stripe_phase: f32,
    logo_at: (f32, f32),
    logo_size: f32,
}

fn color<R: Rng + ?Sized>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    std::array::from_fn(|_| rng.random_range(lo..hi))
}

fn shade(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

impl Palette {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let top = color(rng, 0.15, 0.85);
        let top_alt = top.map(|v| if v > 0.5 { v - 0.25 } else { v + 0.25 });
        let s = rng.random_range(0.55..0.9);
        Self {
            top,
            top_alt,
            bottom: color(rng, 0.1, 0.7),
            skin: [s, s * 0.78, s * 0.64],
            hair: color(rng, 0.05, 0.35),
            shoes: color(rng, 0.05, 0.5),
            logo: [color(rng, 0.0, 1.0), color(rng, 0.0, 1.0)],
            stripe_period: rng.random_range(0.2..0.4),
            stripe_phase: rng.random_range(0.0..1.0),
            logo_at: (rng.random_range(0.2..0.5), rng.random_range(0.2..0.5)),
            logo_size: rng.random_range(0.2..0.3),
        }
    }

    /// Color at part-local `(u, v)`; `u` already folded for left/right symmetry.
    fn at(&self, part: u8, region: BodyRegion, u: f32, v: f32) -> [f32; 3] {
        match region {
            BodyRegion::Body | BodyRegion::Arms => {
                if part == 2 {
                    let (lu, lv) = (u - self.logo_at.0, v - self.logo_at.1);
                    if (0.0..self.logo_size).contains(&lu) && (0.0..self.logo_size).contains(&lv) {
                        let cell = ((lu / self.logo_size * 4.0) as usize
                            + (lv / self.logo_size * 4.0) as usize)
                            % 2;
                        return self.logo[cell];
                    }
                }
                let band =
                    ((v / self.stripe_period + self.stripe_phase).floor() as i64).rem_euclid(2);
                if band == 0 {
                    self.top
                } else {
                    self.top_alt
                }
            }
            BodyRegion::Legs => shade(self.bottom, 0.85 + 0.3 * v),
            BodyRegion::Head => {
                if v < 0.3 {
                    self.hair
                } else {
                    self.skin
                }
            }
            BodyRegion::Hands => self.skin,
            BodyRegion::Feet => shade(self.shoes, 0.9 + 0.2 * u),
        }
    }
}

/// A garment-like texture that is zero outside the atlas parts and
/// left/right symmetric except for the chest logo.
pub fn procedural_texture<R: Rng + ?Sized>(atlas: &Atlas, size: usize, rng: &mut R) -> TextureMap {
    let pal = Palette::sample(rng);
    let mut data = Array3::zeros((size, size, 3));
    for p in atlas.parts() {
        let r = atlas.rect(p.index, size);
        let partner = atlas.mirror_table().partner(p.index);
        for y in r.y0..r.y0 + r.height {
            for x in r.x0..r.x0 + r.width {
                let (_, v) = atlas.uv_of_texel(p.index, y, x, size);
                let (dx, last) = (x - r.x0, r.width.saturating_sub(1));
                let dx = if partner == p.index && p.index != 2 {
                    dx.min(last - dx)
                } else if partner < p.index {
                    last - dx
                } else {
                    dx
                };
                let u = if last > 0 {
                    dx as f32 / last as f32
                } else {
                    0.0
                };
                let c = pal.at(p.index, p.region, u, v);
                for k in 0..3 {
                    data[[y, x, k]] = c[k];
                }
            }
        }
    }
    TextureMap::from_clamped(data).expect("square texture")
}

/// A smoothly varying field of unit normals.
pub fn procedural_normals<R: Rng + ?Sized>(size: usize, rng: &mut R) -> NormalMap {
    let (a, b) = (rng.random_range(0.1..0.5f32), rng.random_range(0.1..0.5f32));
    let (fx, fy) = (rng.random_range(0.5..2.0f32), rng.random_range(0.5..2.0f32));
    let (px, py) = (rng.random_range(0.0..1.0f32), rng.random_range(0.0..1.0f32));
    let tau = std::f32::consts::TAU;
    let data = Array3::from_shape_fn((size, size, 3), |(y, x, k)| {
        let (s, t) = (x as f32 / size as f32, y as f32 / size as f32);
        let v = [
            a * (tau * (fx * s + px)).sin(),
            b * (tau * (fy * t + py)).cos(),
            1.0,
        ];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (v[k] / len + 1.0) / 2.0
    });
    NormalMap::new(data).expect("unit normals by construction")
}

/// Restricts an IUV map to pixels whose texel is visible.
fn visible_iuv(full: &IuvMap, mask: &Mask) -> Result<IuvMap> {
    let mut parts = full.parts().clone();
    let mut uv = full.uv_array().clone();
    for ((y, x), p) in parts.indexed_iter_mut() {
        if mask.get(y, x) == 0.0 {
            *p = 0;
            uv[[y, x, 0]] = 0.0;
            uv[[y, x, 1]] = 0.0;
        }
    }
    IuvMap::new(parts, uv)
}

/// Generates every sample of a spec in memory. Deterministic in the seed.
pub fn generate_samples(spec: &FixtureSpec, atlas: &Atlas) -> Result<Vec<GeneratedSample>> {
    spec.validate()?;
    let n = spec.resolution;
    let m_uv = atlas.uv_mask(n);
    let partition = build_region_partition(&m_uv, atlas)?;
    let full_iuv = exhaustive_iuv(atlas, n);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        // one stream per sample so that sample i does not depend on the count
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64);
        let texture = procedural_texture(atlas, n, &mut rng);
        let mask = match spec.coverage {
            Some(c) => synthesize_with_coverage(&partition, c, &mut rng)?,
            None => synthesize_visibility(&partition, &spec.visibility, &mut rng),
        };
        let normal = procedural_normals(n, &mut rng);
        let iuv = visible_iuv(&full_iuv, &mask)?;
        let image = render_from_uv(&texture, &iuv, atlas)?;
        let densepose = if spec.densepose {
            let cfg = AugmentConfig {
                p_aug: 1.0,
                ..AugmentConfig::default()
            };
            let partial = texture.masked(&mask)?;
            Some(region_wise_augment_pair(
                &partial,
                &mask,
                &partition,
                &m_uv,
                atlas,
                spec.densepose_alpha,
                &cfg,
                &mut rng,
            )?)
        } else {
            None
        };
        out.push(GeneratedSample {
            id: format!("sample_{i:04}"),
            texture,
            mask,
            normal,
            iuv,
            image,
            densepose,
        });
    }
    Ok(out)
}

/// The generated samples as an in-memory training set.
pub fn samples_to_fixture_set(samples: &[GeneratedSample]) -> FixtureSet {
    FixtureSet {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        textures: samples.iter().map(|s| s.texture.clone()).collect(),
        masks: samples.iter().map(|s| s.mask.clone()).collect(),
        normals: samples.iter().map(|s| s.normal.clone()).collect(),
        densepose: samples.iter().filter_map(|s| s.densepose.clone()).collect(),
    }
}

/// Writes the fixture tree and `manifest.json` under `out`.
pub fn generate_fixtures(spec: &FixtureSpec, atlas: &Atlas, out: &Path) -> Result<Manifest> {
    let samples = generate_samples(spec, atlas)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = |dir: &str, suffix: &str| format!("{dir}/{}{suffix}.png", s.id);
        let e = ManifestEntry {
            id: s.id.clone(),
            texture: rel("textures", ""),
            mask: rel("masks", ""),
            normal: rel("normals", ""),
            iuv: rel("iuv", ""),
            image: rel("images", ""),
            densepose: s.densepose.as_ref().map(|_| rel("densepose", "")),
            densepose_mask: s.densepose.as_ref().map(|_| rel("densepose", ".mask")),
        };
        save_texture(&s.texture, &out.join(&e.texture))?;
        save_mask(&s.mask, &out.join(&e.mask))?;
        save_texture(
            &TextureMap::new(s.normal.data().clone())?,
            &out.join(&e.normal),
        )?;
        save_iuv(&s.iuv, &out.join(&e.iuv))?;
        save_image(&s.image, &out.join(&e.image))?;
        if let (Some((t, m)), Some(tp), Some(mp)) = (&s.densepose, &e.densepose, &e.densepose_mask)
        {
            save_texture(t, &out.join(tp))?;
            save_mask(m, &out.join(mp))?;
        }
        entries.push(e);
    }
    let manifest = Manifest {
        version: 1,
        spec: spec.clone(),
        entries,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
