//! The sampling network: two encoders (appearance, geometry), one decoder,
//! and a per-texel sampling grid that resamples the symmetric input texture.

use candle_core::{DType, Device, Module, Tensor, D};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::extractor::{cosine_feature_distance, FeatureExtractor};
use crate::nn::grid_sample::{grid_sample as grid_sample_tensor, identity_grid};
use crate::nn::layers::{upsample2x, Conv, GatedResBlock};
use crate::nn::params::ParamStore;
use crate::uv::{Mask, RegionPartition, TextureMap};

/// Number of strided residual stages per encoder, and of upsampling stages in the decoder.
pub const STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Channels after the stem convolution; stage `i` has `width · min(2^i, 8)`.
    pub width: usize,
    /// Scale of the initial output weights; small values start near the identity grid.
    pub head_gain: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            width: 16,
            head_gain: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("sampler width must be positive".into()));
        }
        if !self.head_gain.is_finite() || self.head_gain < 0.0 {
            return Err(Error::Config(
                "sampler head_gain must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Channel count at scale `i` (0 is full resolution).
    pub fn channels(&self, i: usize) -> usize {
        self.width * (1usize << i).min(8)
    }

    /// Inputs must be divisible by 2^5.
    pub fn check_resolution(&self, size: usize) -> Result<()> {
        if size == 0 || !size.is_multiple_of(1 << STAGES) {
            return Err(Error::shape(
                format!("resolution divisible by {}", 1 << STAGES),
                size.to_string(),
            ));
        }
        Ok(())
    }
}

/// Unit surface normals in UV space, encoded as `(n + 1) / 2` in `(H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    data: Array3<f32>,
}

impl NormalMap {
    /// Decoded vectors must have unit norm within 0.05.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 || h != w {
            return Err(Error::shape(
                "square (H, W, 3) normal map",
                format!("{:?}", data.dim()),
            ));
        }
        for y in 0..h {
            for x in 0..w {
                let n: f32 = (0..3)
                    .map(|k| (2.0 * data[[y, x, k]] - 1.0).powi(2))
                    .sum::<f32>()
                    .sqrt();
                if !n.is_finite() || (n - 1.0).abs() > 0.05 {
                    return Err(Error::InvalidInput(format!(
                        "normal at ({y}, {x}) decodes to length {n}"
                    )));
                }
            }
        }
        Ok(Self { data })
    }

    /// Every texel facing `+z`.
    pub fn flat(size: usize) -> Self {
        let mut data = Array3::from_elem((size, size, 3), 0.5);
        data.index_axis_mut(ndarray::Axis(2), 2).fill(1.0);
        Self { data }
    }

    pub fn size(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// Loads the RGB encoding of an 8-bit image, renormalizing each vector.
    pub fn from_encoded(rgb: &TextureMap) -> Result<Self> {
        let mut data = rgb.data().clone();
        let n = rgb.size();
        for y in 0..n {
            for x in 0..n {
                let v: Vec<f32> = (0..3).map(|k| 2.0 * data[[y, x, k]] - 1.0).collect();
                let len = v.iter().map(|a| a * a).sum::<f32>().sqrt();
                let v = if len < 1e-6 {
                    vec![0.0, 0.0, 1.0]
                } else {
                    v.iter().map(|a| a / len).collect()
                };
                for k in 0..3 {
                    data[[y, x, k]] = (v[k] + 1.0) / 2.0;
                }
            }
        }
        Self::new(data)
    }

    /// `(1, 3, H, W)` tensor of the encoded values.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        TextureMap::new(self.data.clone())?.to_tensor(dtype, device)
    }
}

/// Normalized target-reads-source coordinates `(H, W, 2)` in `[-1, 1]`,
/// `x` first.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    data: Array3<f32>,
}

impl SamplingGrid {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (_, _, c) = data.dim();
        if c != 2 {
            return Err(Error::shape("(H, W, 2) grid", format!("{:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidInput(
                "grid values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn identity(size: usize) -> Self {
        let data = Array3::from_shape_fn((size, size, 2), |(y, x, k)| {
            crate::nn::texel_center(if k == 0 { x } else { y }, size) as f32
        });
        Self { data }
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let (h, w, _) = self.data.dim();
        let flat: Vec<f32> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (1, h, w, 2), device)?.to_dtype(dtype)?)
    }

    /// Reads a `(1, H, W, 2)` or `(H, W, 2)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 {
            t.squeeze(0)?
        } else {
            t.clone()
        };
        let (h, w, c) = t.dims3()?;
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let data = Array3::from_shape_vec((h, w, c), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(data)
    }
}

#[derive(Debug)]
struct Encoder {
    stem: Conv,
    stages: Vec<GatedResBlock>,
}

impl Encoder {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cfg: &SamplerConfig) -> Result<Self> {
        let stem = Conv::new(ps, &format!("{name}.stem"), cin, cfg.channels(0), 3, 1, 1.0)?;
        let stages = (1..=STAGES)
            .map(|i| {
                GatedResBlock::new(
                    ps,
                    &format!("{name}.s{i}"),
                    cfg.channels(i - 1),
                    cfg.channels(i),
                    2,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stem, stages })
    }

    /// Features at every scale, full resolution first.
    fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut feats = vec![crate::nn::layers::leaky_relu(&self.stem.forward(x)?)?];
        for s in &self.stages {
            let next = s.forward(feats.last().expect("stem present"))?;
            feats.push(next);
        }
        Ok(feats)
    }
}

#[derive(Debug)]
pub struct SamplerNet {
    cfg: SamplerConfig,
    params: ParamStore,
    appearance: Encoder,
    geometry: Encoder,
    decoder: Vec<GatedResBlock>,
    head: Conv,
}

impl SamplerNet {
    pub fn new(cfg: SamplerConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let appearance = Encoder::new(&mut ps, "app", 4, &cfg)?;
        let geometry = Encoder::new(&mut ps, "geo", 3, &cfg)?;
        let mut decoder = Vec::with_capacity(STAGES);
        let mut cin = 2 * cfg.channels(STAGES);
        for k in 0..STAGES {
            let scale = STAGES - 1 - k;
            let cout = cfg.channels(scale);
            decoder.push(GatedResBlock::new(
                &mut ps,
                &format!("dec.s{k}"),
                cin + cout,
                cout,
                1,
            )?);
            cin = cout;
        }
        let head = Conv::new(&mut ps, "head", cin, 2, 3, 1, cfg.head_gain)?;
        Ok(Self {
            cfg,
            params: ps,
            appearance,
            geometry,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `t_input (N,3,H,W)`, `m_vis (N,1,H,W)`, `normal (N,3,H,W)` → grid `(N,H,W,2)`.
    pub fn forward(&self, t_input: &Tensor, m_vis: &Tensor, normal: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = t_input.dims4()?;
        if c != 3 || h != w {
            return Err(Error::shape(
                "(N, 3, S, S) texture",
                format!("{:?}", t_input.dims()),
            ));
        }
        self.cfg.check_resolution(h)?;
        if m_vis.dims() != [n, 1, h, w] {
            return Err(Error::shape(
                format!("[{n}, 1, {h}, {w}] mask"),
                format!("{:?}", m_vis.dims()),
            ));
        }
        if normal.dims() != [n, 3, h, w] {
            return Err(Error::shape(
                format!("[{n}, 3, {h}, {w}] normal map"),
                format!("{:?}", normal.dims()),
            ));
        }
        let app = self
            .appearance
            .forward(&Tensor::cat(&[t_input, m_vis], 1)?)?;
        let geo = self.geometry.forward(normal)?;
        let mut x = Tensor::cat(&[&app[STAGES], &geo[STAGES]], 1)?;
        for (k, block) in self.decoder.iter().enumerate() {
            let skip = &app[STAGES - 1 - k];
            x = block.forward(&Tensor::cat(&[&upsample2x(&x)?, skip], 1)?)?;
        }
        let raw = self.head.forward(&x)?.permute((0, 2, 3, 1))?;
        // offset so that a zero head output reproduces the identity grid
        let base = identity_grid(h, w, DType::F64, raw.device())?
            .flatten_all()?
            .to_vec1::<f64>()?
            .into_iter()
            .map(f64::atanh)
            .collect::<Vec<_>>();
        let base = Tensor::from_vec(base, (1, h, w, 2), raw.device())?.to_dtype(raw.dtype())?;
        Ok(raw.broadcast_add(&base)?.tanh()?)
    }
}

/// Single-example forward pass on typed inputs.
pub fn sampler_forward(
    net: &SamplerNet,
    t_input: &TextureMap,
    m_vis: &Mask,
    normal: &NormalMap,
) -> Result<SamplingGrid> {
    let n = t_input.size();
    if m_vis.size() != n || normal.size() != n {
        return Err(Error::shape(
            format!("inputs at {n}x{n}"),
            format!("mask {0}x{0}, normal {1}x{1}", m_vis.size(), normal.size()),
        ));
    }
    let ps = net.params();
    let (dt, dev) = (ps.dtype(), ps.device());
    let grid = net.forward(
        &t_input.to_tensor(dt, dev)?,
        &m_vis.to_tensor(dt, dev)?,
        &normal.to_tensor(dt, dev)?,
    )?;
    SamplingGrid::from_tensor(&grid)
}

/// Bilinear resampling of a texture through a grid (border clamped).
pub fn grid_sample(t: &TextureMap, grid: &SamplingGrid) -> Result<TextureMap> {
    let (h, w, _) = grid.data().dim();
    if h != w {
        return Err(Error::shape("square grid", format!("{h}x{w}")));
    }
    let out = grid_sample_tensor(
        &t.to_tensor(DType::F64, &Device::Cpu)?,
        &grid.to_tensor(DType::F64, &Device::Cpu)?,
    )?;
    TextureMap::from_tensor(&out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Per-sample sums, averaged over the batch.
    Sum,
    /// Divided by the number of elements `N · 3 · H · W`.
    Mean,
}

/// `Σ_i ‖w_i · M_i ⊙ (t_sample − t_gt)‖₁` for a `(N or 1, 1, H, W)` weight map.
pub fn weighted_recon_loss_tensor(
    t_sample: &Tensor,
    t_gt: &Tensor,
    weight_map: &Tensor,
    reduction: Reduction,
) -> Result<Tensor> {
    let diff = (t_sample - t_gt)?.abs()?.broadcast_mul(weight_map)?;
    let n = t_sample.dim(0)?;
    Ok(match reduction {
        Reduction::Sum => (diff.sum_all()? / n as f64)?,
        Reduction::Mean => diff.mean_all()?,
    })
}

/// Weight map of a partition as a `(1, 1, H, W)` tensor.
pub fn weight_map_tensor(
    partition: &RegionPartition,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let w: Array2<f32> = partition.weight_map();
    let n = partition.size();
    Ok(
        Tensor::from_vec(w.iter().copied().collect::<Vec<_>>(), (1, 1, n, n), device)?
            .to_dtype(dtype)?,
    )
}

/// Region-weighted L1 between two textures, summed over texels and channels.
pub fn weighted_recon_loss(
    t_sample: &TextureMap,
    t_gt: &TextureMap,
    partition: &RegionPartition,
) -> Result<f64> {
    t_sample.check_same(t_gt)?;
    if partition.size() != t_sample.size() {
        return Err(Error::shape(
            format!("{0}x{0} partition", t_sample.size()),
            format!("{0}x{0}", partition.size()),
        ));
    }
    let dev = Device::Cpu;
    let loss = weighted_recon_loss_tensor(
        &t_sample.to_tensor(DType::F64, &dev)?,
        &t_gt.to_tensor(DType::F64, &dev)?,
        &weight_map_tensor(partition, DType::F64, &dev)?,
        Reduction::Sum,
    )?;
    Ok(loss.to_scalar::<f64>()?)
}

/// Weighted L1 normalized by the total weight: the mean absolute error per
/// weighted texel channel.
pub fn weighted_l1_per_texel(
    t_sample: &TextureMap,
    t_gt: &TextureMap,
    partition: &RegionPartition,
) -> Result<f64> {
    let total: f64 = partition
        .weight_map()
        .iter()
        .map(|&w| w as f64)
        .sum::<f64>()
        * 3.0;
    if total == 0.0 {
        return Err(Error::InvalidInput(
            "partition has zero total weight".into(),
        ));
    }
    Ok(weighted_recon_loss(t_sample, t_gt, partition)? / total)
}

pub fn perceptual_distance_tensor(
    a: &Tensor,
    b: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<Tensor> {
    cosine_feature_distance(a, b, extractor)
}

pub fn perceptual_distance(
    a: &TextureMap,
    b: &TextureMap,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    a.check_same(b)?;
    let dev = Device::Cpu;
    let d = cosine_feature_distance(
        &a.to_tensor(DType::F64, &dev)?,
        &b.to_tensor(DType::F64, &dev)?,
        extractor,
    )?;
    Ok(d.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Coefficients of the sampler objective.
pub const RECON_WEIGHT: f64 = 1.0;
pub const PERCEPTUAL_WEIGHT: f64 = 1.0;

/// `1 · weighted recon + 1 · perceptual` on batched tensors.
pub fn sampler_loss_tensor(
    t_sample: &Tensor,
    t_gt: &Tensor,
    weight_map: &Tensor,
    extractor: &dyn FeatureExtractor,
    reduction: Reduction,
) -> Result<(Tensor, Tensor, Tensor)> {
    let recon = weighted_recon_loss_tensor(t_sample, t_gt, weight_map, reduction)?;
    let perc = cosine_feature_distance(t_sample, t_gt, extractor)?;
    let total = ((&recon * RECON_WEIGHT)? + (&perc * PERCEPTUAL_WEIGHT)?)?;
    Ok((total, recon, perc))
}

pub fn sampler_loss(
    t_sample: &TextureMap,
    t_gt: &TextureMap,
    partition: &RegionPartition,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    Ok(
        RECON_WEIGHT * weighted_recon_loss(t_sample, t_gt, partition)?
            + PERCEPTUAL_WEIGHT * perceptual_distance(t_sample, t_gt, extractor)?,
    )
}

/// Mean over the last dimension, kept for diagnostics of grid spread.
pub fn grid_displacement(grid: &Tensor) -> Result<f64> {
    let (_, h, w, _) = grid.dims4()?;
    let id = identity_grid(h, w, grid.dtype(), grid.device())?;
    let d = grid
        .broadcast_sub(&id)?
        .sqr()?
        .sum(D::Minus1)?
        .sqrt()?
        .mean_all()?;
    Ok(d.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::extractor::RandomConvExtractor;
    use crate::uv::{build_region_partition, Atlas, BodyRegion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_texture(rng: &mut ChaCha8Rng, n: usize) -> TextureMap {
        TextureMap::new(Array3::from_shape_fn((n, n, 3), |_| rng.random::<f32>())).unwrap()
    }

    #[test]
    fn forward_shape_range_and_determinism() {
        let dev = Device::Cpu;
        let cfg = SamplerConfig {
            width: 4,
            head_gain: 1.0,
        };
        let net = SamplerNet::new(cfg, 3, DType::F32, &dev).unwrap();
        let t = Tensor::rand(0f32, 1.0, (2, 3, 32, 32), &dev).unwrap();
        let m = Tensor::ones((2, 1, 32, 32), DType::F32, &dev).unwrap();
        let nrm = Tensor::rand(0f32, 1.0, (2, 3, 32, 32), &dev).unwrap();
        let g1 = net.forward(&t, &m, &nrm).unwrap();
        let g2 = net.forward(&t, &m, &nrm).unwrap();
        assert_eq!(g1.dims(), &[2, 32, 32, 2]);
        let v1 = g1.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v1.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        assert_eq!(v1, g2.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        let nrm2 = (nrm * 0.5).unwrap();
        let g3 = net.forward(&t, &m, &nrm2).unwrap();
        let diff = (g3 - g1)
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 0.0);
    }

    #[test]
    fn extreme_inputs_stay_bounded() {
        let dev = Device::Cpu;
        let net = SamplerNet::new(
            SamplerConfig {
                width: 4,
                head_gain: 5.0,
            },
            9,
            DType::F32,
            &dev,
        )
        .unwrap();
        let t = (Tensor::randn(0f32, 1.0, (1, 3, 32, 32), &dev).unwrap() * 1e4).unwrap();
        let m = Tensor::ones((1, 1, 32, 32), DType::F32, &dev).unwrap();
        let g = net.forward(&t, &m, &t).unwrap();
        let v = g.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn zero_head_is_identity_grid() {
        let dev = Device::Cpu;
        let net = SamplerNet::new(
            SamplerConfig {
                width: 4,
                head_gain: 0.0,
            },
            1,
            DType::F64,
            &dev,
        )
        .unwrap();
        let t = Tensor::rand(0f64, 1.0, (1, 3, 32, 32), &dev).unwrap();
        let m = Tensor::ones((1, 1, 32, 32), DType::F64, &dev).unwrap();
        let g = net.forward(&t, &m, &t).unwrap();
        let out = grid_sample_tensor(&t, &g).unwrap();
        let d = (out - &t)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(d < 1e-5, "{d}");
    }

    #[test]
    fn rejects_bad_resolution() {
        let dev = Device::Cpu;
        let net = SamplerNet::new(
            SamplerConfig {
                width: 2,
                head_gain: 1.0,
            },
            1,
            DType::F32,
            &dev,
        )
        .unwrap();
        let t = Tensor::zeros((1, 3, 24, 24), DType::F32, &dev).unwrap();
        let m = Tensor::zeros((1, 1, 24, 24), DType::F32, &dev).unwrap();
        assert!(net.forward(&t, &m, &t).is_err());
        let t = Tensor::zeros((1, 3, 32, 32), DType::F32, &dev).unwrap();
        assert!(net.forward(&t, &m, &t).is_err());
    }

    #[test]
    fn normal_map_validation() {
        assert!(NormalMap::new(Array3::from_elem((4, 4, 3), 0.5)).is_err());
        let flat = NormalMap::flat(4);
        assert!(NormalMap::new(flat.data().clone()).is_ok());
    }

    #[test]
    fn recon_loss_matches_loop_oracle_and_is_homogeneous() {
        let atlas = Atlas::standard();
        let n = 64;
        let part = build_region_partition(&atlas.uv_mask(n), &atlas).unwrap();
        let wm = part.weight_map();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_texture(&mut rng, n);
        let b = random_texture(&mut rng, n);
        let mut oracle = 0.0f64;
        for y in 0..n {
            for x in 0..n {
                for c in 0..3 {
                    oracle += wm[[y, x]] as f64
                        * (a.data()[[y, x, c]] as f64 - b.data()[[y, x, c]] as f64).abs();
                }
            }
        }
        let got = weighted_recon_loss(&a, &b, &part).unwrap();
        assert!((got - oracle).abs() < 1e-6 * oracle.max(1.0));
        assert_eq!(weighted_recon_loss(&a, &a, &part).unwrap(), 0.0);

        let dev = Device::Cpu;
        let ta = a.to_tensor(DType::F64, &dev).unwrap();
        let tb = b.to_tensor(DType::F64, &dev).unwrap();
        let w = weight_map_tensor(&part, DType::F64, &dev).unwrap();
        let base = weighted_recon_loss_tensor(&ta, &tb, &w, Reduction::Sum)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        for k in [-3.0, 0.5, 2.0] {
            let scaled = (&tb + ((&ta - &tb).unwrap() * k).unwrap()).unwrap();
            let l = weighted_recon_loss_tensor(&scaled, &tb, &w, Reduction::Sum)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!((l - f64::abs(k) * base).abs() < 1e-9 * base);
        }
    }

    #[test]
    fn face_errors_weigh_six_times_body_errors() {
        let atlas = Atlas::standard();
        let n = 64;
        let part = build_region_partition(&atlas.uv_mask(n), &atlas).unwrap();
        let head = part.region(BodyRegion::Head).mask.clone();
        let body = part.region(BodyRegion::Body).mask.clone();
        let k = head.sum().min(body.sum()) as usize;
        let gt = TextureMap::filled(n, [0.5; 3]);
        let perturb = |m: &Mask| {
            let mut t = gt.clone();
            let mut left = k;
            for y in 0..n {
                for x in 0..n {
                    if left > 0 && m.get(y, x) > 0.0 {
                        t.set(y, x, [0.75; 3]);
                        left -= 1;
                    }
                }
            }
            t
        };
        let lf = weighted_recon_loss(&perturb(&head), &gt, &part).unwrap();
        let lb = weighted_recon_loss(&perturb(&body), &gt, &part).unwrap();
        assert_eq!(lf / lb, 6.0);
    }

    #[test]
    fn sampler_loss_is_sum_of_terms() {
        let atlas = Atlas::standard();
        let n = 32;
        let part = build_region_partition(&atlas.uv_mask(n), &atlas).unwrap();
        let ex = RandomConvExtractor::default_pyramid(DType::F64, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_texture(&mut rng, n);
        let b = random_texture(&mut rng, n);
        let total = sampler_loss(&a, &b, &part, &ex).unwrap();
        let parts =
            weighted_recon_loss(&a, &b, &part).unwrap() + perceptual_distance(&a, &b, &ex).unwrap();
        assert!((total - parts).abs() < 1e-9 * total);
        assert_eq!(sampler_loss(&a, &a, &part, &ex).unwrap(), 0.0);
    }

    #[test]
    fn typed_grid_sample_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_texture(&mut rng, 8);
        let out = grid_sample(&t, &SamplingGrid::identity(8)).unwrap();
        assert!(out.max_abs_diff(&t) <= 1e-6);
    }
}
