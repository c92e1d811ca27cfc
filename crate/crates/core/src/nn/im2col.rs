//! Convolution as patch extraction followed by a matrix product, so that
//! both passes run through GEMM.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        (n, c, h, w): (usize, usize, usize, usize),
        k: usize,
        stride: usize,
        pad: usize,
    ) -> candle_core::Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            candle_core::bail!("kernel {k} larger than padded input {h}x{w}");
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn cols(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Calls `f(src_row, dst_row, ox_range)` for every row segment of the
    /// patch matrix, laid out as `(C·k·k, N·Ho·Wo)`: `src_row` starts at the
    /// input element read by output column `ox_lo`, stepping by `stride`.
    #[inline]
    fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let plane = self.ho * self.wo;
        let width = self.n * plane;
        for ch in 0..self.c {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ch * k + ky) * k + kx;
                    // output columns whose input x = ox·s + kx − p lies inside [0, w)
                    let ox_lo = p.saturating_sub(kx).div_ceil(s);
                    let ox_hi = ((self.w + p).saturating_sub(kx)).div_ceil(s).min(self.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for b in 0..self.n {
                        let base = (b * self.c + ch) * self.h * self.w;
                        for oy in 0..self.ho {
                            let y = oy * s + ky;
                            if y < p || y - p >= self.h {
                                continue;
                            }
                            let src = base + (y - p) * self.w + ox_lo * s + kx - p;
                            let dst = r * width + b * plane + oy * self.wo + ox_lo;
                            f(src, dst, ox_hi - ox_lo, s);
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: WithDType>(src: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.ho * g.wo * g.cols()];
    g.for_each_segment(|s, d, len, stride| {
        let dst = &mut out[d..d + len];
        if stride == 1 {
            dst.copy_from_slice(&src[s..s + len]);
        } else {
            for (i, o) in dst.iter_mut().enumerate() {
                *o = src[s + i * stride];
            }
        }
    });
    out
}

fn col2im<T: WithDType + std::ops::AddAssign>(cols: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    g.for_each_segment(|s, d, len, stride| {
        for (i, &v) in cols[d..d + len].iter().enumerate() {
            out[s + i * stride] += v;
        }
    });
    out
}

struct Im2Col {
    k: usize,
    stride: usize,
    pad: usize,
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(l.shape().dims4()?, self.k, self.stride, self.pad)?;
        let (start, end) = l
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("im2col expects a contiguous input".into()))?;
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(im2col(&v[start..end], &g)),
            CpuStorage::F64(v) => CpuStorage::F64(im2col(&v[start..end], &g)),
            other => candle_core::bail!("im2col does not support {:?}", other.dtype()),
        };
        Ok((out, Shape::from((g.cols(), g.n * g.ho * g.wo))))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let g = Geometry::new(arg.dims4()?, self.k, self.stride, self.pad)?;
        let grad = grad_res.contiguous()?;
        let out = match arg.dtype() {
            candle_core::DType::F32 => {
                let v = col2im(&grad.flatten_all()?.to_vec1::<f32>()?, &g);
                Tensor::from_vec(v, arg.shape(), arg.device())?
            }
            _ => {
                let v = col2im(
                    &grad
                        .to_dtype(candle_core::DType::F64)?
                        .flatten_all()?
                        .to_vec1::<f64>()?,
                    &g,
                );
                Tensor::from_vec(v, arg.shape(), arg.device())?.to_dtype(arg.dtype())?
            }
        };
        Ok(Some(out))
    }
}

/// 2-D cross-correlation of `x` `(N, C, H, W)` with `weight` `(O, C, k, k)`,
/// zero padding `pad`; no bias.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, _, h, w) = x.dims4()?;
    let (o, c, k, _) = weight.dims4()?;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let cols = x.contiguous()?.apply_op1(Im2Col { k, stride, pad })?;
    let y = weight.reshape((o, c * k * k))?.matmul(&cols)?;
    Ok(y.reshape((o, n, ho, wo))?.transpose(0, 1)?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference_check, GradTarget};
    use candle_core::{Device, Var};

    #[test]
    fn matches_candle_conv() {
        let dev = Device::Cpu;
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0), (4, 1, 1)] {
            let x = Tensor::randn(0f64, 1.0, (2, 3, 9, 8), &dev).unwrap();
            let w = Tensor::randn(0f64, 1.0, (5, 3, k, k), &dev).unwrap();
            let a = conv2d(&x, &w, stride, pad).unwrap();
            let b = x.conv2d(&w, pad, stride, 1, 1).unwrap();
            assert_eq!(a.dims(), b.dims());
            let d = (a - b)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(d < 1e-12, "k{k} s{stride} p{pad}: {d}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (1, 2, 7, 7), &dev).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 2, 3, 3), &dev).unwrap()).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (1, 3, 4, 4), &dev).unwrap();
        let f = || -> Result<Tensor> {
            Ok((conv2d(x.as_tensor(), w.as_tensor(), 2, 1)? * &probe)?.sum_all()?)
        };
        let targets = [GradTarget::new("x", &x), GradTarget::new("w", &w)];
        for (name, rel) in finite_difference_check(f, &targets, 1e-4, 20).unwrap() {
            assert!(rel <= 1e-6, "{name}: {rel}");
        }
    }
}
