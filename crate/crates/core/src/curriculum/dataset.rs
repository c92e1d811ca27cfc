//! Fixture directories and batch assembly.
//!
//! A fixture root holds `textures/`, optionally `masks/`, `normals/` and
//! `densepose/` (estimator textures `<id>.png` with masks `<id>.mask.png`).
//! Files are enumerated in sorted filename order and paired by position,
//! cycling when a directory holds fewer files than `textures/`.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::{
    make_training_example, CurriculumState, ExampleContext, MaskSampler, MaskSynthConfig,
    SourceKind, TrainingExample,
};
use crate::error::{Error, Result};
use crate::sampler::NormalMap;
use crate::uv::io::{load_mask, load_texture};
use crate::uv::{Mask, TextureMap};

#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    pub ids: Vec<String>,
    pub textures: Vec<TextureMap>,
    pub masks: Vec<Mask>,
    pub normals: Vec<NormalMap>,
    pub densepose: Vec<(TextureMap, Mask)>,
}

fn sorted_pngs(dir: &Path, skip_suffix: Option<&str>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter(|p| {
            skip_suffix.is_none_or(|s| {
                !p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(s))
            })
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

impl FixtureSet {
    pub fn load(root: &Path) -> Result<Self> {
        let tex_dir = root.join("textures");
        if !tex_dir.is_dir() {
            return Err(Error::Data(format!(
                "fixture root {} has no textures/ directory",
                root.display()
            )));
        }
        let mut set = FixtureSet::default();
        for p in sorted_pngs(&tex_dir, None)? {
            set.ids.push(stem(&p));
            set.textures.push(load_texture(&p)?);
        }
        if set.textures.is_empty() {
            return Err(Error::Data(format!(
                "{} holds no textures",
                tex_dir.display()
            )));
        }
        let masks = root.join("masks");
        if masks.is_dir() {
            for p in sorted_pngs(&masks, None)? {
                set.masks.push(load_mask(&p)?.binarized(0.5));
            }
        }
        let normals = root.join("normals");
        if normals.is_dir() {
            for p in sorted_pngs(&normals, None)? {
                set.normals
                    .push(NormalMap::from_encoded(&load_texture(&p)?)?);
            }
        }
        let dp = root.join("densepose");
        if dp.is_dir() {
            for p in sorted_pngs(&dp, Some(".mask.png"))? {
                let mask_path = dp.join(format!("{}.mask.png", stem(&p)));
                if !mask_path.is_file() {
                    return Err(Error::Data(format!(
                        "{} has no mask {}",
                        p.display(),
                        mask_path.display()
                    )));
                }
                set.densepose
                    .push((load_texture(&p)?, load_mask(&mask_path)?.binarized(0.5)));
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.resolution();
        if self.textures.is_empty() {
            return Err(Error::Data("fixture set holds no textures".into()));
        }
        let sizes = self
            .textures
            .iter()
            .map(|t| t.size())
            .chain(self.masks.iter().map(|m| m.size()))
            .chain(self.normals.iter().map(|m| m.size()))
            .chain(
                self.densepose
                    .iter()
                    .flat_map(|(t, m)| [t.size(), m.size()]),
            );
        for s in sizes {
            if s != n {
                return Err(Error::Data(format!(
                    "fixture resolutions differ: {n} and {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.textures.first().map_or(0, |t| t.size())
    }

    pub fn has_densepose(&self) -> bool {
        !self.densepose.is_empty()
    }

    pub fn mask_for(&self, i: usize) -> Option<&Mask> {
        (!self.masks.is_empty()).then(|| &self.masks[i % self.masks.len()])
    }

    pub fn normal_for(&self, i: usize) -> NormalMap {
        if self.normals.is_empty() {
            NormalMap::flat(self.resolution())
        } else {
            self.normals[i % self.normals.len()].clone()
        }
    }

    pub fn densepose_for(&self, i: usize) -> Option<(&TextureMap, &Mask)> {
        (!self.densepose.is_empty()).then(|| {
            let (t, m) = &self.densepose[i % self.densepose.len()];
            (t, m)
        })
    }

    /// The training example of fixture `i`.
    pub fn example<R: Rng + ?Sized>(
        &self,
        i: usize,
        ctx: &ExampleContext,
        synth: &MaskSynthConfig,
        state: &CurriculumState,
        rng: &mut R,
    ) -> Result<TrainingExample> {
        let mask = match self.mask_for(i) {
            Some(m) => MaskSampler::Fixed(m),
            None => MaskSampler::Synthetic(synth),
        };
        make_training_example(
            ctx,
            &self.textures[i],
            mask,
            &self.normal_for(i),
            self.densepose_for(i),
            state,
            rng,
        )
    }
}

/// A stacked batch of examples, `(N, C, H, W)` each.
#[derive(Debug, Clone)]
pub struct Batch {
    pub t_input: Tensor,
    pub m_vis: Tensor,
    pub normal: Tensor,
    pub t_gt: Tensor,
    pub indices: Vec<usize>,
    pub sources: Vec<SourceKind>,
    pub augmented: Vec<bool>,
}

impl Batch {
    pub fn from_examples(
        examples: &[TrainingExample],
        indices: Vec<usize>,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let stack = |f: &dyn Fn(&TrainingExample) -> Result<Tensor>| -> Result<Tensor> {
            let parts = examples.iter().map(f).collect::<Result<Vec<_>>>()?;
            Ok(Tensor::cat(&parts, 0)?)
        };
        Ok(Self {
            t_input: stack(&|e| e.t_input.to_tensor(dtype, device))?,
            m_vis: stack(&|e| e.m_vis.to_tensor(dtype, device))?,
            normal: stack(&|e| e.normal.to_tensor(dtype, device))?,
            t_gt: stack(&|e| e.t_gt.to_tensor(dtype, device))?,
            indices,
            sources: examples.iter().map(|e| e.source).collect(),
            augmented: examples.iter().map(|e| e.augmented).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `batch_size` fixtures with replacement and builds their examples.
pub fn sample_batch<R: Rng + ?Sized>(
    set: &FixtureSet,
    ctx: &ExampleContext,
    synth: &MaskSynthConfig,
    state: &CurriculumState,
    batch_size: usize,
    dtype: DType,
    device: &Device,
    rng: &mut R,
) -> Result<Batch> {
    if set.is_empty() {
        return Err(Error::Data("no fixtures to sample from".into()));
    }
    let indices: Vec<usize> = (0..batch_size)
        .map(|_| rng.random_range(0..set.len()))
        .collect();
    let examples = indices
        .iter()
        .map(|&i| set.example(i, ctx, synth, state, rng))
        .collect::<Result<Vec<_>>>()?;
    Batch::from_examples(&examples, indices, dtype, device)
}
