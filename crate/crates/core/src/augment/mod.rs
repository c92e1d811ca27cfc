//! Misalignment augmentation: region-wise thin-plate-spline warps, the
//! curriculum-driven warp strength and global color jitter.

pub mod jitter;
pub mod tps;
pub mod warp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uv::Atlas;

pub use jitter::{apply_jitter, color_jitter, ColorJitterConfig, JitterParams};
pub use tps::{regular_grid, TpsTransform};
pub use warp::{
    region_wise_augment, region_wise_augment_pair, sample_region_warps, warp_region, RegionWarp,
};

/// Warp strength for a curriculum step: 0 at step 0, `0.1 + step·δ` afterwards.
pub fn alpha_schedule(step: i64, delta: f64) -> Result<f64> {
    if step < 0 {
        return Err(Error::InvalidInput(format!(
            "negative curriculum step {step}"
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "invalid step increment {delta}"
        )));
    }
    Ok(if step == 0 {
        0.0
    } else {
        0.1 + step as f64 * delta
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Probability that a training example is warped at all.
    pub p_aug: f64,
    /// Control points per side of the per-region lattice.
    pub control_grid: usize,
    /// Bounding-box padding in texels; `None` uses the atlas gutter, which is
    /// 4 texels at 256².
    pub bbox_padding: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_aug: 0.8,
            control_grid: 4,
            bbox_padding: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_aug) {
            return Err(Error::Config(format!(
                "p_aug {} outside [0, 1]",
                self.p_aug
            )));
        }
        if self.control_grid < 2 {
            return Err(Error::Config(
                "control grid needs at least 2x2 points".into(),
            ));
        }
        Ok(())
    }

    pub fn padding_texels(&self, atlas: &Atlas, size: usize) -> usize {
        self.bbox_padding
            .unwrap_or_else(|| atlas.gutter_texels(size))
    }
}

/// Upper bound on α accepted by the augmentation.
pub const MAX_ALPHA: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_table() {
        let d = 0.025;
        let table = [(0, 0.0), (1, 0.125), (2, 0.15), (3, 0.175), (7, 0.275)];
        for (step, want) in table {
            assert!(
                (alpha_schedule(step, d).unwrap() - want).abs() < 1e-12,
                "step {step}"
            );
        }
        assert!(alpha_schedule(-1, d).is_err());
    }

    #[test]
    fn schedule_is_affine_after_step_zero() {
        let d = 0.04;
        for s in 1..20 {
            let a = alpha_schedule(s, d).unwrap();
            let b = alpha_schedule(s + 1, d).unwrap();
            assert!((b - a - d).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            p_aug: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
