//! Training-data selection: curriculum steps, warp strength and the choice
//! between synthetic misalignment and pre-computed estimator textures.

pub mod dataset;
pub mod masks;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{alpha_schedule, region_wise_augment_pair, AugmentConfig};
use crate::error::{Error, Result};
use crate::sampler::NormalMap;
use crate::uv::{
    build_region_partition, compose_symmetric, mask_ground_truth, mirror_texture, Atlas, Mask,
    RegionPartition, TextureMap,
};

pub use dataset::{sample_batch, Batch, FixtureSet};
pub use masks::{synthesize_visibility, synthesize_with_coverage, MaskSynthConfig};

/// Steps before which estimator textures are never used.
pub const DENSEPOSE_FIRST_STEP: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumState {
    pub iteration: u64,
    pub iters_per_step: u64,
    pub delta: f64,
    pub densepose_mix: f64,
}

impl Default for CurriculumState {
    fn default() -> Self {
        Self {
            iteration: 0,
            iters_per_step: 4000,
            delta: 0.025,
            densepose_mix: 0.5,
        }
    }
}

impl CurriculumState {
    pub fn at(iteration: u64) -> Self {
        Self {
            iteration,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters_per_step == 0 {
            return Err(Error::Config("iters_per_step must be positive".into()));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("invalid delta {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.densepose_mix) {
            return Err(Error::Config(format!(
                "densepose_mix {} outside [0, 1]",
                self.densepose_mix
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> u64 {
        self.iteration / self.iters_per_step.max(1)
    }

    pub fn alpha(&self) -> f64 {
        alpha_schedule(self.step() as i64, self.delta).unwrap_or(0.0)
    }

    pub fn with_iteration(self, iteration: u64) -> Self {
        Self { iteration, ..self }
    }
}

pub fn current_step(state: &CurriculumState) -> u64 {
    state.step()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Augment,
    DensePoseFixture,
}

/// Synthetic misalignment before step 3; afterwards estimator textures with
/// probability `densepose_mix` when any are available.
pub fn select_source<R: Rng + ?Sized>(
    state: &CurriculumState,
    rng: &mut R,
    has_densepose_fixtures: bool,
) -> SourceKind {
    if state.step() < DENSEPOSE_FIRST_STEP || !has_densepose_fixtures {
        return SourceKind::Augment;
    }
    if rng.random_bool(state.densepose_mix) {
        SourceKind::DensePoseFixture
    } else {
        SourceKind::Augment
    }
}

/// Where the visibility mask of an example comes from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSampler<'a> {
    Fixed(&'a Mask),
    Synthetic(&'a MaskSynthConfig),
}

/// Everything shared by the examples of one resolution.
#[derive(Debug, Clone)]
pub struct ExampleContext {
    pub atlas: Atlas,
    pub m_uv: Mask,
    pub partition: RegionPartition,
    pub augment: AugmentConfig,
}

impl ExampleContext {
    pub fn new(atlas: &Atlas, size: usize, augment: AugmentConfig) -> Result<Self> {
        augment.validate()?;
        let m_uv = atlas.uv_mask(size);
        let partition = build_region_partition(&m_uv, atlas)?;
        Ok(Self {
            atlas: atlas.clone(),
            m_uv,
            partition,
            augment,
        })
    }

    pub fn size(&self) -> usize {
        self.m_uv.size()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub t_input: TextureMap,
    pub m_vis: Mask,
    pub normal: NormalMap,
    pub t_gt: TextureMap,
    /// The (possibly warped) partial texture before mirroring, and its mask.
    pub t_source: TextureMap,
    pub m_source: Mask,
    pub source: SourceKind,
    pub augmented: bool,
}

/// Builds one `(T_input, M_vis, normal, T_GT)` tuple.
///
/// The partial texture is either the masked ground truth, warped with
/// probability `p_aug` at the curriculum's α, or a pre-computed estimator
/// texture. It is then mirrored and composed symmetrically; the visibility
/// mask is the union of the source mask and its mirror.
pub fn make_training_example<R: Rng + ?Sized>(
    ctx: &ExampleContext,
    t_gt: &TextureMap,
    mask: MaskSampler<'_>,
    normal: &NormalMap,
    densepose: Option<(&TextureMap, &Mask)>,
    state: &CurriculumState,
    rng: &mut R,
) -> Result<TrainingExample> {
    let size = ctx.size();
    if t_gt.size() != size || normal.size() != size {
        return Err(Error::shape(
            format!("{size}x{size} fixtures"),
            format!(
                "texture {0}x{0}, normal {1}x{1}",
                t_gt.size(),
                normal.size()
            ),
        ));
    }
    let source = select_source(state, rng, densepose.is_some());
    let mut augmented = false;
    let (t_source, m_source) = match source {
        SourceKind::DensePoseFixture => {
            let (t, m) = densepose
                .ok_or_else(|| Error::Data("estimator texture required but missing".into()))?;
            let m = m.binarized(0.5).intersection(&ctx.m_uv);
            (t.masked(&m)?, m)
        }
        SourceKind::Augment => {
            let m = match mask {
                MaskSampler::Fixed(m) => {
                    if m.size() != size {
                        return Err(Error::shape(
                            format!("{size}x{size} mask"),
                            format!("{0}x{0}", m.size()),
                        ));
                    }
                    m.binarized(0.5).intersection(&ctx.m_uv)
                }
                MaskSampler::Synthetic(cfg) => synthesize_visibility(&ctx.partition, cfg, rng),
            };
            let t_gt_m = mask_ground_truth(t_gt, &m)?;
            augmented = rng.random_bool(ctx.augment.p_aug);
            if augmented {
                region_wise_augment_pair(
                    &t_gt_m,
                    &m,
                    &ctx.partition,
                    &ctx.m_uv,
                    &ctx.atlas,
                    state.alpha(),
                    &ctx.augment,
                    rng,
                )?
            } else {
                (t_gt_m, m)
            }
        }
    };
    let (t_mirror, m_mirror) = mirror_texture(&t_source, &m_source, &ctx.atlas)?;
    let t_input = compose_symmetric(&t_source, &m_source, &t_mirror)?;
    let m_vis = m_source.union(&m_mirror);
    Ok(TrainingExample {
        t_input,
        m_vis,
        normal: normal.clone(),
        t_gt: t_gt.masked(&ctx.m_uv)?,
        t_source,
        m_source,
        source,
        augmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_texture(rng: &mut ChaCha8Rng, n: usize) -> TextureMap {
        TextureMap::new(Array3::from_shape_fn((n, n, 3), |_| rng.random::<f32>())).unwrap()
    }

    #[test]
    fn step_counting() {
        for (it, step) in [(0, 0), (3999, 0), (4000, 1), (29999, 7)] {
            assert_eq!(current_step(&CurriculumState::at(it)), step);
        }
        assert!((CurriculumState::at(8000).alpha() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn no_estimator_source_before_step_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for it in (0..12000).step_by(7) {
            assert_eq!(
                select_source(&CurriculumState::at(it), &mut rng, true),
                SourceKind::Augment
            );
        }
        assert_eq!(
            select_source(&CurriculumState::at(20000), &mut rng, false),
            SourceKind::Augment
        );
    }

    #[test]
    fn mix_frequency_at_step_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = CurriculumState::at(12000);
        let hits = (0..10_000)
            .filter(|_| select_source(&state, &mut rng, true) == SourceKind::DensePoseFixture)
            .count();
        assert!((hits as f64 / 10_000.0 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn unaugmented_example_is_symmetric_composition() {
        let atlas = Atlas::standard();
        let ctx = ExampleContext::new(
            &atlas,
            64,
            AugmentConfig {
                p_aug: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_texture(&mut rng, 64);
        let m = synthesize_visibility(&ctx.partition, &MaskSynthConfig::default(), &mut rng);
        let normal = NormalMap::flat(64);
        let ex = make_training_example(
            &ctx,
            &t,
            MaskSampler::Fixed(&m),
            &normal,
            None,
            &CurriculumState::at(0),
            &mut rng,
        )
        .unwrap();
        let t_m = mask_ground_truth(&t, &m).unwrap();
        let (t_mir, m_mir) = mirror_texture(&t_m, &m, &atlas).unwrap();
        assert_eq!(ex.t_input, compose_symmetric(&t_m, &m, &t_mir).unwrap());
        assert_eq!(ex.m_vis, m.union(&m_mir));
        assert!(!ex.augmented);
    }

    #[test]
    fn full_visibility_reproduces_ground_truth() {
        let atlas = Atlas::standard();
        let ctx = ExampleContext::new(&atlas, 64, AugmentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_texture(&mut rng, 64);
        let normal = NormalMap::flat(64);
        let m_uv = ctx.m_uv.clone();
        for _ in 0..5 {
            let ex = make_training_example(
                &ctx,
                &t,
                MaskSampler::Fixed(&m_uv),
                &normal,
                None,
                &CurriculumState::at(0),
                &mut rng,
            )
            .unwrap();
            assert_eq!(ex.t_input, t.masked(&m_uv).unwrap());
            assert_eq!(ex.t_gt, ex.t_input);
        }
    }

    #[test]
    fn augmentation_frequency() {
        let atlas = Atlas::standard();
        let ctx = ExampleContext::new(&atlas, 32, AugmentConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_texture(&mut rng, 32);
        let normal = NormalMap::flat(32);
        let state = CurriculumState::at(4000);
        let m = ctx.m_uv.clone();
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            let ex = make_training_example(
                &ctx,
                &t,
                MaskSampler::Fixed(&m),
                &normal,
                None,
                &state,
                &mut rng,
            )
            .unwrap();
            hits += ex.augmented as usize;
        }
        assert!((hits as f64 / n as f64 - 0.8).abs() <= 0.02);
    }
}
