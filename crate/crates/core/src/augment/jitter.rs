use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::uv::TextureMap;

/// Amplitudes of the global color perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterConfig {
    /// Additive brightness offset drawn from `U(-b, b)`.
    pub brightness: f32,
    /// Contrast factor drawn from `U(1 - c, 1 + c)`.
    pub contrast: f32,
    /// Hue rotation drawn from `U(-h, h)`, in turns.
    pub hue: f32,
}

impl Default for ColorJitterConfig {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.1,
            hue: 0.05,
        }
    }
}

impl ColorJitterConfig {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            hue: 0.0,
        }
    }
}

/// One concrete draw of the jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub hue: f32,
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        brightness: 0.0,
        contrast: 1.0,
        hue: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &ColorJitterConfig, rng: &mut R) -> Self {
        let mut draw = |a: f32| {
            if a > 0.0 {
                rng.random_range(-a..=a)
            } else {
                0.0
            }
        };
        JitterParams {
            brightness: draw(cfg.brightness),
            contrast: 1.0 + draw(cfg.contrast),
            hue: draw(cfg.hue),
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Applies brightness, then contrast about the mean intensity, then a hue
/// rotation, clamping the result to `[0, 1]`. Neutral parameters are skipped.
pub fn apply_jitter(t: &TextureMap, p: &JitterParams) -> TextureMap {
    let mut data = t.data().clone();
    if p.brightness != 0.0 {
        data.mapv_inplace(|v| v + p.brightness);
    }
    if p.contrast != 1.0 {
        let mean = data.mean().unwrap_or(0.0);
        data.mapv_inplace(|v| (v - mean) * p.contrast + mean);
    }
    if p.hue != 0.0 {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        for mut px in data.lanes_mut(ndarray::Axis(2)) {
            let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            let rgb = hsv_to_rgb([h + p.hue, s, v]);
            for c in 0..3 {
                px[c] = rgb[c];
            }
        }
    }
    TextureMap::from_clamped(data).expect("shape unchanged")
}

/// Random global color perturbation with amplitudes from `cfg`.
pub fn color_jitter<R: Rng + ?Sized>(
    t: &TextureMap,
    cfg: &ColorJitterConfig,
    rng: &mut R,
) -> TextureMap {
    apply_jitter(t, &JitterParams::sample(cfg, rng))
}
