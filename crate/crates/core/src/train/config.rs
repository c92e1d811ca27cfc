//! Training configuration: a flat `key = value` file (TOML scalars), command
//! line overrides, and an environment override for the fixture root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, ColorJitterConfig};
use crate::curriculum::{CurriculumState, MaskSynthConfig};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::refiner::{LossWeights, RefinerConfig};
use crate::sampler::{Reduction, SamplerConfig};

/// Overrides `fixture_root` when set.
pub const FIXTURE_ROOT_ENV: &str = "UVTEX_FIXTURE_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub fixture_root: PathBuf,
    /// Optional atlas file; the bundled layout when empty.
    pub atlas: Option<PathBuf>,
    pub resolution: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub p_aug: f64,
    pub delta: f64,
    pub iters_per_step: u64,
    pub densepose_mix: f64,
    pub jitter_prob: f64,
    pub checkpoint_every: u64,
    pub reduction: Reduction,
    pub sampler_width: usize,
    pub sampler_head_gain: f64,
    pub refiner_width: usize,
    pub disc_width: usize,
    pub w_recon: f64,
    pub w_perceptual: f64,
    pub w_gan: f64,
    pub w_fm: f64,
    pub visible_full: f64,
    pub visible_hidden: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let m = MaskSynthConfig::default();
        Self {
            seed: 0,
            fixture_root: PathBuf::from("fixtures"),
            atlas: None,
            resolution: 256,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 8,
            iterations: 30_000,
            p_aug: 0.8,
            delta: 0.025,
            iters_per_step: 4000,
            densepose_mix: 0.5,
            jitter_prob: 0.5,
            checkpoint_every: 1000,
            reduction: Reduction::Mean,
            sampler_width: SamplerConfig::default().width,
            sampler_head_gain: SamplerConfig::default().head_gain,
            refiner_width: RefinerConfig::default().width,
            disc_width: RefinerConfig::default().disc_width,
            w_recon: w.recon,
            w_perceptual: w.perceptual,
            w_gan: w.gan,
            w_fm: w.feature_matching,
            visible_full: m.p_full,
            visible_hidden: m.p_hidden,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // bare words are taken as strings so that paths need no quoting
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl TrainConfig {
    /// Parses the flat file format. Unknown keys are rejected.
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?}: expected key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (when given), applies `overrides`, then the environment.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut cfg = Self::from_str_with_overrides(&text, overrides)?;
        if let Some(root) = std::env::var_os(FIXTURE_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.fixture_root = PathBuf::from(root);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_aug", self.p_aug),
            ("densepose_mix", self.densepose_mix),
            ("jitter_prob", self.jitter_prob),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.sampler().validate()?;
        self.sampler().check_resolution(self.resolution)?;
        self.refiner().validate()?;
        self.loss_weights().validate()?;
        self.augment().validate()?;
        self.curriculum(0).validate()?;
        self.mask_synth().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            width: self.sampler_width,
            head_gain: self.sampler_head_gain,
        }
    }

    pub fn refiner(&self) -> RefinerConfig {
        RefinerConfig {
            width: self.refiner_width,
            disc_width: self.disc_width,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.w_recon,
            perceptual: self.w_perceptual,
            gan: self.w_gan,
            feature_matching: self.w_fm,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            p_aug: self.p_aug,
            ..AugmentConfig::default()
        }
    }

    pub fn jitter(&self) -> ColorJitterConfig {
        ColorJitterConfig::default()
    }

    pub fn mask_synth(&self) -> MaskSynthConfig {
        MaskSynthConfig {
            p_full: self.visible_full,
            p_hidden: self.visible_hidden,
        }
    }

    pub fn curriculum(&self, iteration: u64) -> CurriculumState {
        CurriculumState {
            iteration,
            iters_per_step: self.iters_per_step,
            delta: self.delta,
            densepose_mix: self.densepose_mix,
        }
    }

    /// The config as a flat `key = value` listing that parses back to itself.
    pub fn to_flat_string(&self) -> Result<String> {
        let v = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = String::new();
        if let toml::Value::Table(t) = v {
            for (k, v) in t {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2), (2e-4, 0.9, 0.999));
        assert_eq!((c.batch_size, c.iterations), (8, 30_000));
        assert_eq!((c.p_aug, c.delta, c.jitter_prob), (0.8, 0.025, 0.5));
        c.validate().unwrap();
    }

    #[test]
    fn flat_file_and_overrides() {
        let text =
            "# comment\nseed = 7\nfixture_root = data/fx\nresolution = 64\nlr = 1e-3 # inline\n";
        let c =
            TrainConfig::from_str_with_overrides(text, &["batch_size=4".into(), "seed=9".into()])
                .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.fixture_root, PathBuf::from("data/fx"));
        assert_eq!(c.lr, 1e-3);
        let back = TrainConfig::from_str_with_overrides(&c.to_flat_string().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig::from_str_with_overrides("nonsense = 1", &[]).is_err());
        assert!(TrainConfig::from_str_with_overrides("p_aug = 1.5", &[]).is_err());
        assert!(TrainConfig::from_str_with_overrides("resolution = 48", &[]).is_err());
        assert!(TrainConfig::from_str_with_overrides("just words", &[]).is_err());
    }
}
