//! The refinement U-Net, its blending rule, the patch discriminator and the
//! four-term refiner objective.

use candle_core::{DType, Device, Module, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::extractor::FeatureExtractor;
use crate::nn::layers::{instance_norm, leaky_relu, sigmoid, upsample2x, Conv, ResBlock};
use crate::nn::params::ParamStore;
use crate::sampler::Reduction;
use crate::uv::{Mask, TextureMap};

pub const DOWN_STAGES: usize = 3;
pub const RES_BLOCKS: usize = 9;
/// Probability clamp inside the adversarial logs.
pub const GAN_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Stem width; stage `i` has `width · 2^i` channels.
    pub width: usize,
    /// Discriminator stem width.
    pub disc_width: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            width: 16,
            disc_width: 16,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.disc_width == 0 {
            return Err(Error::Config("refiner widths must be positive".into()));
        }
        Ok(())
    }

    pub fn check_resolution(&self, size: usize) -> Result<()> {
        if size == 0 || !size.is_multiple_of(1 << DOWN_STAGES) {
            return Err(Error::shape(
                format!("resolution divisible by {}", 1 << DOWN_STAGES),
                size.to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RefinerNet {
    cfg: RefinerConfig,
    params: ParamStore,
    stem: Conv,
    down: Vec<Conv>,
    blocks: Vec<ResBlock>,
    up: Vec<Conv>,
    texture_head: Conv,
    mask_head: Conv,
}

impl RefinerNet {
    pub fn new(cfg: RefinerConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let ch = |i: usize| cfg.width << i;
        let stem = Conv::new(&mut ps, "stem", 4, ch(0), 3, 1, 1.0)?;
        let down = (0..DOWN_STAGES)
            .map(|i| Conv::new(&mut ps, &format!("down{i}"), ch(i), ch(i + 1), 3, 2, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..RES_BLOCKS)
            .map(|i| ResBlock::new(&mut ps, &format!("res{i}"), ch(DOWN_STAGES)))
            .collect::<Result<Vec<_>>>()?;
        let up = (0..DOWN_STAGES)
            .map(|k| {
                let scale = DOWN_STAGES - 1 - k;
                Conv::new(
                    &mut ps,
                    &format!("up{k}"),
                    ch(scale + 1) + ch(scale),
                    ch(scale),
                    3,
                    1,
                    1.0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let texture_head = Conv::new(&mut ps, "head.texture", ch(0), 3, 3, 1, 0.5)?;
        let mask_head = Conv::new(&mut ps, "head.mask", ch(0), 1, 3, 1, 0.5)?;
        Ok(Self {
            cfg,
            params: ps,
            stem,
            down,
            blocks,
            up,
            texture_head,
            mask_head,
        })
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `t_sample (N,3,H,W)`, `m_occ (N,1,H,W)` → `(T_refine (N,3,H,W), M_blend (N,1,H,W))`.
    pub fn forward(&self, t_sample: &Tensor, m_occ: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, c, h, w) = t_sample.dims4()?;
        if c != 3 || h != w {
            return Err(Error::shape(
                "(N, 3, S, S) texture",
                format!("{:?}", t_sample.dims()),
            ));
        }
        self.cfg.check_resolution(h)?;
        if m_occ.dims() != [n, 1, h, w] {
            return Err(Error::shape(
                format!("[{n}, 1, {h}, {w}] mask"),
                format!("{:?}", m_occ.dims()),
            ));
        }
        let mut skips = vec![leaky_relu(
            &self.stem.forward(&Tensor::cat(&[t_sample, m_occ], 1)?)?,
        )?];
        for d in &self.down {
            let x = leaky_relu(&instance_norm(
                &d.forward(skips.last().expect("stem present"))?,
            )?)?;
            skips.push(x);
        }
        let mut x = skips.pop().expect("bottleneck present");
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        for u in &self.up {
            let skip = skips.pop().expect("one skip per stage");
            x = leaky_relu(&instance_norm(
                &u.forward(&Tensor::cat(&[&upsample2x(&x)?, &skip], 1)?)?,
            )?)?;
        }
        Ok((
            sigmoid(&self.texture_head.forward(&x)?)?,
            sigmoid(&self.mask_head.forward(&x)?)?,
        ))
    }
}

/// Single-example forward pass on typed inputs.
pub fn refiner_forward(
    net: &RefinerNet,
    t_sample: &TextureMap,
    m_occ: &Mask,
) -> Result<(TextureMap, Mask)> {
    if m_occ.size() != t_sample.size() {
        return Err(Error::shape(
            format!("{0}x{0} mask", t_sample.size()),
            format!("{0}x{0}", m_occ.size()),
        ));
    }
    let ps = net.params();
    let (t, m) = net.forward(
        &t_sample.to_tensor(ps.dtype(), ps.device())?,
        &m_occ.to_tensor(ps.dtype(), ps.device())?,
    )?;
    Ok((TextureMap::from_tensor(&t)?, Mask::from_tensor(&m)?))
}

/// `t_sample ⊙ m + t_refine ⊙ (1 − m)` on tensors; `m` broadcasts over channels.
pub fn blend_tensor(t_sample: &Tensor, t_refine: &Tensor, m_blend: &Tensor) -> Result<Tensor> {
    let keep = t_sample.broadcast_mul(m_blend)?;
    let fill = t_refine.broadcast_mul(&m_blend.affine(-1.0, 1.0)?)?;
    Ok((keep + fill)?)
}

pub fn blend(t_sample: &TextureMap, t_refine: &TextureMap, m_blend: &Mask) -> Result<TextureMap> {
    t_sample.check_same(t_refine)?;
    t_sample.check_mask(m_blend)?;
    let n = t_sample.size();
    let (s, r, m) = (t_sample.data(), t_refine.data(), m_blend.data());
    let out = Array3::from_shape_fn((n, n, 3), |(y, x, c)| {
        let a = m[[y, x]];
        s[[y, x, c]] * a + r[[y, x, c]] * (1.0 - a)
    });
    TextureMap::from_clamped(out)
}

/// `‖t_sample − t_final‖₁`; the target is the sampled texture, not the ground truth.
pub fn refiner_recon_loss_tensor(
    t_final: &Tensor,
    t_sample: &Tensor,
    reduction: Reduction,
) -> Result<Tensor> {
    let d = (t_sample - t_final)?.abs()?;
    Ok(match reduction {
        Reduction::Sum => (d.sum_all()? / t_final.dim(0)? as f64)?,
        Reduction::Mean => d.mean_all()?,
    })
}

pub fn refiner_recon_loss(t_final: &TextureMap, t_sample: &TextureMap) -> Result<f64> {
    t_final.check_same(t_sample)?;
    Ok(t_final
        .data()
        .iter()
        .zip(t_sample.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualTapSchedule {
    pub taps: Vec<usize>,
    /// Each tap contributes with weight `1 / divisor`.
    pub divisors: Vec<f64>,
}

impl Default for PerceptualTapSchedule {
    fn default() -> Self {
        Self {
            taps: vec![1, 6, 11, 20, 29],
            divisors: vec![32.0, 16.0, 8.0, 4.0, 1.0],
        }
    }
}

impl PerceptualTapSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.taps.len() != self.divisors.len() || self.taps.is_empty() {
            return Err(Error::Config(
                "tap schedule needs one divisor per tap".into(),
            ));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tap indices must increase strictly".into()));
        }
        if self.divisors.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::Config("tap divisors must be positive".into()));
        }
        Ok(())
    }
}

/// Mean absolute feature difference at every scheduled tap, unweighted.
pub fn tapped_feature_distances(
    a: &Tensor,
    b: &Tensor,
    extractor: &dyn FeatureExtractor,
    schedule: &PerceptualTapSchedule,
) -> Result<Vec<Tensor>> {
    schedule.validate()?;
    let n = a.dim(0)?;
    let feats = extractor.extract(&Tensor::cat(&[a, b], 0)?, &schedule.taps)?;
    feats
        .iter()
        .map(|f| {
            Ok((f.narrow(0, 0, n)? - f.narrow(0, n, n)?)?
                .abs()?
                .mean_all()?)
        })
        .collect()
}

/// `Σ_i (1 / w_i) · mean|F_i(t_gt) − F_i(t_final)|`.
pub fn tapped_perceptual_loss_tensor(
    t_final: &Tensor,
    t_gt: &Tensor,
    extractor: &dyn FeatureExtractor,
    schedule: &PerceptualTapSchedule,
) -> Result<Tensor> {
    let per_tap = tapped_feature_distances(t_gt, t_final, extractor, schedule)?;
    let mut total = per_tap[0].zeros_like()?;
    for (d, w) in per_tap.iter().zip(&schedule.divisors) {
        total = (total + (d / *w)?)?;
    }
    Ok(total)
}

pub fn tapped_perceptual_loss(
    t_final: &TextureMap,
    t_gt: &TextureMap,
    extractor: &dyn FeatureExtractor,
    schedule: &PerceptualTapSchedule,
) -> Result<f64> {
    t_final.check_same(t_gt)?;
    let dev = Device::Cpu;
    let l = tapped_perceptual_loss_tensor(
        &t_final.to_tensor(DType::F64, &dev)?,
        &t_gt.to_tensor(DType::F64, &dev)?,
        extractor,
        schedule,
    )?;
    Ok(l.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Patch classifier: three stride-2 4×4 stages, one stride-1 stage and a
/// stride-1 output convolution (70×70 receptive field). Outputs per-patch
/// probabilities.
#[derive(Debug)]
pub struct Discriminator {
    params: ParamStore,
    stages: Vec<Conv>,
    out: Conv,
}

/// Number of intermediate activations exposed for feature matching.
pub const DISC_TAPS: usize = 3;

impl Discriminator {
    pub fn new(width: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("discriminator width must be positive".into()));
        }
        let mut ps = ParamStore::new(seed, dtype, device);
        let plan = [
            (3, width, 2),
            (width, 2 * width, 2),
            (2 * width, 4 * width, 2),
            (4 * width, 8 * width, 1),
        ];
        let stages = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, s))| {
                Ok(Conv::new(&mut ps, &format!("d{i}"), cin, cout, 4, s, 1.0)?.with_padding(1))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Conv::new(&mut ps, "d.out", 8 * width, 1, 4, 1, 1.0)?.with_padding(1);
        Ok(Self {
            params: ps,
            stages,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Receptive field of one output patch, in texels.
    pub const RECEPTIVE_FIELD: usize = 70;

    /// Patch probabilities `(N, 1, h, w)` and the first three activations.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut taps = Vec::with_capacity(DISC_TAPS);
        let mut h = x.clone();
        for (i, s) in self.stages.iter().enumerate() {
            h = s.forward(&h)?;
            if i > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h)?;
            if taps.len() < DISC_TAPS {
                taps.push(h.clone());
            }
        }
        Ok((sigmoid(&self.out.forward(&h)?)?, taps))
    }
}

fn clamped_log(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(GAN_EPS, 1.0 - GAN_EPS)?.log()?)
}

/// Minimization losses `(d_loss, g_loss)` from patch probabilities on real and
/// generated inputs. The discriminator term is `−log D(real) − log(1 − D(fake))`;
/// the generator term is the non-saturating `−log D(fake)`. Both are averaged
/// over the batch and the patch map.
pub fn gan_losses_from_probs(p_real: &Tensor, p_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let real = clamped_log(p_real)?.mean_all()?;
    let fake = clamped_log(&p_fake.affine(-1.0, 1.0)?)?.mean_all()?;
    let d_loss = (real + fake)?.neg()?;
    let g_loss = clamped_log(p_fake)?.mean_all()?.neg()?;
    Ok((d_loss, g_loss))
}

pub fn gan_losses(d: &Discriminator, t_gt: &Tensor, t_final: &Tensor) -> Result<(Tensor, Tensor)> {
    let (p_real, _) = d.forward(t_gt)?;
    let (p_fake, _) = d.forward(t_final)?;
    gan_losses_from_probs(&p_real, &p_fake)
}

/// `Σ_i mean|D_i(a) − D_i(b)|` over the discriminator's tapped activations.
pub fn feature_matching_from_taps(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::InvalidInput(
            "feature matching needs matching, non-empty tap lists".into(),
        ));
    }
    let mut total = real[0].zeros_like()?.sum_all()?;
    for (r, f) in real.iter().zip(fake) {
        total = (total + (r - f)?.abs()?.mean_all()?)?;
    }
    Ok(total)
}

pub fn feature_matching_loss(d: &Discriminator, t_gt: &Tensor, t_final: &Tensor) -> Result<Tensor> {
    let (_, real) = d.forward(t_gt)?;
    let (_, fake) = d.forward(t_final)?;
    feature_matching_from_taps(&real, &fake)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon: f64,
    pub perceptual: f64,
    pub gan: f64,
    pub feature_matching: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 10.0,
            perceptual: 10.0,
            gan: 1.0,
            feature_matching: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.recon, self.perceptual, self.gan, self.feature_matching];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The four refiner loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinerLossComponents<T = f64> {
    pub recon: T,
    pub perceptual: T,
    pub gan: T,
    pub feature_matching: T,
}

pub fn refiner_total_loss(c: &RefinerLossComponents, w: &LossWeights) -> f64 {
    w.recon * c.recon
        + w.perceptual * c.perceptual
        + w.gan * c.gan
        + w.feature_matching * c.feature_matching
}

pub fn refiner_total_loss_tensor(
    c: &RefinerLossComponents<Tensor>,
    w: &LossWeights,
) -> Result<Tensor> {
    Ok(
        ((((&c.recon * w.recon)? + (&c.perceptual * w.perceptual)?)? + (&c.gan * w.gan)?)?
            + (&c.feature_matching * w.feature_matching)?)?,
    )
}

/// The generator's four loss terms. Reconstruction compares `t_final` with
/// `t_sample`; the perceptual, adversarial and feature-matching terms compare
/// with `t_gt`, whose discriminator responses are treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn refiner_loss_components(
    t_final: &Tensor,
    t_sample: &Tensor,
    t_gt: &Tensor,
    d: &Discriminator,
    extractor: &dyn FeatureExtractor,
    schedule: &PerceptualTapSchedule,
    reduction: Reduction,
) -> Result<RefinerLossComponents<Tensor>> {
    let (p_real, taps_real) = d.forward(t_gt)?;
    let (p_fake, taps_fake) = d.forward(t_final)?;
    let taps_real: Vec<Tensor> = taps_real.iter().map(Tensor::detach).collect();
    let (_, gan) = gan_losses_from_probs(&p_real.detach(), &p_fake)?;
    Ok(RefinerLossComponents {
        recon: refiner_recon_loss_tensor(t_final, t_sample, reduction)?,
        perceptual: tapped_perceptual_loss_tensor(t_final, t_gt, extractor, schedule)?,
        gan,
        feature_matching: feature_matching_from_taps(&taps_real, &taps_fake)?,
    })
}
