//! Frozen convolutional feature extractors used by the perceptual losses and
//! metrics.
//!
//! Pretrained backbones are not bundled. The defaults are randomly initialized
//! from a fixed seed, which still yields a deterministic multi-scale feature
//! space; any backbone can be slotted in through [`FeatureExtractor`].

use candle_core::{DType, Device, Module, Tensor, D};

use crate::error::{Error, Result};
use crate::nn::layers::Conv;
use crate::nn::params::ParamStore;

/// Seed of the default extractors.
pub const EXTRACTOR_SEED: u64 = 0x1f0e_2d3c_4b5a_6978;

pub trait FeatureExtractor: Send + Sync {
    /// Number of addressable layers.
    fn layer_count(&self) -> usize;

    /// Layers used when the caller does not name any.
    fn default_taps(&self) -> Vec<usize>;

    /// Activations after each requested layer, for `(N, 3, H, W)` inputs in
    /// `[0, 1]`, in the extractor's own dtype.
    fn extract(&self, x: &Tensor, taps: &[usize]) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv),
    Relu,
    MaxPool,
}

/// A sequential stack of convolutions, ReLUs and 2×2 max-pools with frozen weights.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    layers: Vec<Layer>,
    default_taps: Vec<usize>,
    dtype: DType,
}

impl RandomConvExtractor {
    fn build(
        seed: u64,
        dtype: DType,
        device: &Device,
        plan: &[(usize, usize)],
        pool_after_block: bool,
        blocks: &[usize],
    ) -> Result<Self> {
        let mut ps = ParamStore::new(seed, dtype, device);
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut cin = 3;
        for (b, (&(width, stride), &convs)) in plan.iter().zip(blocks).enumerate() {
            if pool_after_block && b > 0 {
                layers.push(Layer::MaxPool);
            }
            for i in 0..convs {
                let s = if i == 0 { stride } else { 1 };
                let conv = Conv::new(&mut ps, &format!("b{b}.c{i}"), cin, width, 3, s, 1.0)?;
                layers.push(Layer::Conv(conv.detached()?));
                layers.push(Layer::Relu);
                if i == 0 {
                    taps.push(layers.len() - 1);
                }
                cin = width;
            }
        }
        Ok(Self {
            layers,
            default_taps: taps,
            dtype,
        })
    }

    /// Five strided conv/ReLU stages; taps after each stage.
    pub fn pyramid(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let plan = [(16, 1), (24, 2), (32, 2), (48, 2), (64, 2)];
        Self::build(seed, dtype, device, &plan, false, &[1; 5])
    }

    /// Layer-for-layer the layout of the VGG-19 feature stack (indices 1, 6,
    /// 11, 20 and 29 are the first ReLU of each block) at reduced width.
    pub fn vgg19_layout(
        seed: u64,
        widths: [usize; 5],
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let plan: Vec<(usize, usize)> = widths.iter().map(|&w| (w, 1)).collect();
        Self::build(seed, dtype, device, &plan, true, &[2, 2, 4, 4, 4])
    }

    pub fn default_pyramid(dtype: DType, device: &Device) -> Result<Self> {
        Self::pyramid(EXTRACTOR_SEED, dtype, device)
    }

    pub fn default_vgg(dtype: DType, device: &Device) -> Result<Self> {
        Self::vgg19_layout(
            EXTRACTOR_SEED ^ 0x9e37_79b9,
            [8, 16, 24, 32, 32],
            dtype,
            device,
        )
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn default_taps(&self) -> Vec<usize> {
        self.default_taps.clone()
    }

    fn extract(&self, x: &Tensor, taps: &[usize]) -> Result<Vec<Tensor>> {
        if let Some(&bad) = taps.iter().find(|&&t| t >= self.layers.len()) {
            return Err(Error::Config(format!(
                "tap {bad} missing: extractor has {} layers",
                self.layers.len()
            )));
        }
        let last = taps.iter().copied().max().unwrap_or(0);
        let mut h = x.to_dtype(self.dtype)?.affine(2.0, -1.0)?;
        let mut collected = vec![None; taps.len()];
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            h = match layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Relu => h.relu()?,
                Layer::MaxPool => h.max_pool2d(2)?,
            };
            for (slot, &t) in collected.iter_mut().zip(taps) {
                if t == i {
                    *slot = Some(h.clone());
                }
            }
        }
        Ok(collected
            .into_iter()
            .map(|t| t.expect("every tap visited"))
            .collect())
    }
}

/// Cosine distance between channel vectors, averaged over positions and
/// summed over the extractor's default taps; one value per batch element
/// averaged over the batch. Zero for identical inputs and symmetric.
pub fn cosine_feature_distance(
    a: &Tensor,
    b: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<Tensor> {
    let taps = extractor.default_taps();
    let n = a.dim(0)?;
    let both = Tensor::cat(&[a, b], 0)?;
    let feats = extractor.extract(&both, &taps)?;
    let mut total: Option<Tensor> = None;
    for f in feats {
        let norm = (f.sqr()?.sum_keepdim(1)? + 1e-10)?.sqrt()?;
        let unit = f.broadcast_div(&norm)?;
        let ua = unit.narrow(0, 0, n)?;
        let ub = unit.narrow(0, n, n)?;
        // ½‖â − b̂‖² = 1 − cos for unit vectors
        let d = ((ua - ub)?.sqr()?.sum_keepdim(1)? * 0.5)?;
        let d = d.flatten_from(1)?.mean(D::Minus1)?.mean(0)?;
        total = Some(match total {
            Some(t) => (t + d)?,
            None => d,
        });
    }
    total.ok_or_else(|| Error::Config("extractor exposes no taps".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_layout_indices() {
        let e = RandomConvExtractor::default_vgg(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(e.default_taps(), vec![1, 6, 11, 20, 29]);
        assert_eq!(e.layer_count(), 36);
        let x = Tensor::rand(0f32, 1.0, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let f = e.extract(&x, &[1, 6, 11, 20, 29]).unwrap();
        let sizes: Vec<_> = f.iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![32, 16, 8, 4, 2]);
        assert!(e.extract(&x, &[40]).is_err());
    }

    #[test]
    fn pyramid_is_deterministic() {
        let a = RandomConvExtractor::default_pyramid(DType::F32, &Device::Cpu).unwrap();
        let b = RandomConvExtractor::default_pyramid(DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::rand(0f32, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
        let fa = a.extract(&x, &a.default_taps()).unwrap();
        let fb = b.extract(&x, &b.default_taps()).unwrap();
        for (p, q) in fa.iter().zip(&fb) {
            assert_eq!(
                p.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                q.flatten_all().unwrap().to_vec1::<f32>().unwrap()
            );
        }
    }

    #[test]
    fn cosine_distance_properties() {
        let e = RandomConvExtractor::default_pyramid(DType::F64, &Device::Cpu).unwrap();
        for _ in 0..10 {
            let a = Tensor::rand(0f64, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
            let b = Tensor::rand(0f64, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
            let same = cosine_feature_distance(&a, &a, &e)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            let ab = cosine_feature_distance(&a, &b, &e)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            let ba = cosine_feature_distance(&b, &a, &e)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert_eq!(same, 0.0);
            assert!(ab > 0.0);
            assert!((ab - ba).abs() < 1e-12);
        }
    }
}
