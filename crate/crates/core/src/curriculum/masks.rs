//! Synthetic visibility masks standing in for rendered views.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uv::{Mask, RegionPartition};

/// Odds of each per-region visibility outcome; the remainder is a half-plane cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSynthConfig {
    pub p_full: f64,
    pub p_hidden: f64,
}

impl Default for MaskSynthConfig {
    fn default() -> Self {
        Self {
            p_full: 0.3,
            p_hidden: 0.0,
        }
    }
}

impl MaskSynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_full) || !ok(self.p_hidden) || self.p_full + self.p_hidden > 1.0 {
            return Err(Error::Config(
                "mask synthesis probabilities must form a distribution".into(),
            ));
        }
        Ok(())
    }
}

/// Texels of a region with their projection onto a random direction.
fn projected<R: Rng + ?Sized>(region: &Mask, rng: &mut R) -> Vec<(f64, usize, usize)> {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    region
        .data()
        .indexed_iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|((y, x), _)| (x as f64 * c + y as f64 * s, y, x))
        .collect()
}

/// Per-region random visibility: each region is fully visible, hidden, or cut
/// by a random half-plane. The result is binary and a subset of the partition.
pub fn synthesize_visibility<R: Rng + ?Sized>(
    partition: &RegionPartition,
    cfg: &MaskSynthConfig,
    rng: &mut R,
) -> Mask {
    let mut out = Mask::zeros(partition.size());
    for region in partition.regions() {
        let draw: f64 = rng.random();
        let texels = projected(&region.mask, rng);
        let keep = if draw < cfg.p_full {
            texels.len()
        } else if draw < cfg.p_full + cfg.p_hidden {
            0
        } else {
            let frac: f64 = rng.random_range(0.2..0.8);
            (frac * texels.len() as f64).round() as usize
        };
        keep_lowest(&mut out, texels, keep);
    }
    out
}

/// Every region cut by a random half-plane that leaves `coverage` of its
/// texels visible; emulates a view whose visible UV fraction is `coverage`.
pub fn synthesize_with_coverage<R: Rng + ?Sized>(
    partition: &RegionPartition,
    coverage: f64,
    rng: &mut R,
) -> Result<Mask> {
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::InvalidInput(format!(
            "coverage {coverage} outside [0, 1]"
        )));
    }
    let mut out = Mask::zeros(partition.size());
    for region in partition.regions() {
        let texels = projected(&region.mask, rng);
        let keep = (coverage * texels.len() as f64).round() as usize;
        keep_lowest(&mut out, texels, keep);
    }
    Ok(out)
}

fn keep_lowest(out: &mut Mask, mut texels: Vec<(f64, usize, usize)>, keep: usize) {
    texels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, y, x) in texels.iter().take(keep) {
        out.set(y, x, 1.0);
    }
}
