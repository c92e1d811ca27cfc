use candle_core::{Module, Tensor, D};

use crate::error::Result;
use crate::nn::im2col::conv2d;
use crate::nn::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Per-sample, per-channel normalization over the spatial dimensions.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    Ok(normed.reshape((n, c, h, w))?)
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv {
    /// `k × k` convolution, He-normal weights scaled by `gain`, zero bias.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = (cin * k * k) as f64;
        let weight = ps.normal(
            &format!("{name}.weight"),
            &[cout, cin, k, k],
            gain * (2.0 / fan_in).sqrt(),
        )?;
        let bias = ps.zeros(&format!("{name}.bias"), &[cout])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    /// Same as [`Conv::new`] with an explicit padding.
    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    /// A copy whose weights are plain tensors outside any autograd graph.
    pub fn detached(&self) -> Result<Self> {
        Ok(Self {
            weight: self.weight.detach().copy()?,
            bias: self.bias.detach().copy()?,
            stride: self.stride,
            padding: self.padding,
        })
    }
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y =
            conv2d(x, &self.weight, self.stride, self.padding).map_err(candle_core::Error::wrap)?;
        let c = self.bias.dims()[0];
        y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)
    }
}

/// Gated convolution: `LeakyReLU(IN(features)) ⊙ σ(gate)`, both branches from
/// one convolution producing twice the output channels.
#[derive(Debug, Clone)]
pub struct GatedConv {
    conv: Conv,
    channels: usize,
}

impl GatedConv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(ps, name, cin, 2 * cout, 3, stride, 1.0)?,
            channels: cout,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let feat = y.narrow(1, 0, self.channels)?;
        let gate = y.narrow(1, self.channels, self.channels)?;
        Ok((leaky_relu(&instance_norm(&feat)?)? * sigmoid(&gate)?)?)
    }
}

/// Residual block of two gated convolutions; the first may downsample.
#[derive(Debug, Clone)]
pub struct GatedResBlock {
    first: GatedConv,
    second: GatedConv,
    shortcut: Option<Conv>,
}

impl GatedResBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        let shortcut = if cin != cout || stride != 1 {
            Some(Conv::new(ps, &format!("{name}.skip"), cin, cout, 1, stride, 1.0)?.with_padding(0))
        } else {
            None
        };
        Ok(Self {
            first: GatedConv::new(ps, &format!("{name}.g1"), cin, cout, stride)?,
            second: GatedConv::new(ps, &format!("{name}.g2"), cout, cout, 1)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let skip = match &self.shortcut {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        let y = self.second.forward(&self.first.forward(x)?)?;
        Ok((skip + y)?)
    }
}

/// Plain residual block `x + IN(conv(act(IN(conv(x)))))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    pub fn new(ps: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv::new(ps, &format!("{name}.c1"), ch, ch, 3, 1, 1.0)?,
            c2: Conv::new(ps, &format!("{name}.c2"), ch, ch, 3, 1, 0.5)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = leaky_relu(&instance_norm(&self.c1.forward(x)?)?)?;
        let y = instance_norm(&self.c2.forward(&y)?)?;
        Ok((x + y)?)
    }
}
