//! Differentiable bilinear resampling of a texture through a sampling grid.
//!
//! Grid coordinates are normalized to `[-1, 1]` over texel centres with the
//! half-texel convention: texel `i` of a side of length `n` sits at
//! `(2i + 1) / n − 1`. Reads outside the texture clamp to the border.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

/// Maps a normalized coordinate to a clamped texel coordinate; the flag is
/// false when clamping was active (zero derivative).
#[inline]
fn unnormalize(g: f64, n: usize) -> (f64, bool) {
    let p = ((g + 1.0) * n as f64 - 1.0) / 2.0;
    let hi = (n - 1) as f64;
    if p <= 0.0 {
        (0.0, p == 0.0)
    } else if p >= hi {
        (hi, p == hi)
    } else {
        (p, true)
    }
}

/// Bilinear taps `(index, weight)` plus the position inside the cell.
#[derive(Clone, Copy)]
struct Taps {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    dx_active: bool,
    dy_active: bool,
}

#[inline]
fn taps(gx: f64, gy: f64, w: usize, h: usize) -> Taps {
    let (px, ax) = unnormalize(gx, w);
    let (py, ay) = unnormalize(gy, h);
    let x0 = px.floor() as usize;
    let y0 = py.floor() as usize;
    Taps {
        x0,
        y0,
        x1: (x0 + 1).min(w - 1),
        y1: (y0 + 1).min(h - 1),
        fx: px - x0 as f64,
        fy: py - y0 as f64,
        dx_active: ax,
        dy_active: ay,
    }
}

fn forward_impl(
    src: &[f64],
    grid: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; n * c * ho * wo];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let gi = ((b * ho + oy) * wo + ox) * 2;
                let t = taps(grid[gi], grid[gi + 1], w, h);
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    let v00 = src[base + t.y0 * w + t.x0];
                    let v01 = src[base + t.y0 * w + t.x1];
                    let v10 = src[base + t.y1 * w + t.x0];
                    let v11 = src[base + t.y1 * w + t.x1];
                    out[((b * c + ch) * ho + oy) * wo + ox] = (1.0 - t.fy)
                        * ((1.0 - t.fx) * v00 + t.fx * v01)
                        + t.fy * ((1.0 - t.fx) * v10 + t.fx * v11);
                }
            }
        }
    }
    out
}

fn backward_impl(
    src: &[f64],
    grid: &[f64],
    grad_out: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (ho, wo): (usize, usize),
) -> (Vec<f64>, Vec<f64>) {
    let mut g_src = vec![0.0; src.len()];
    let mut g_grid = vec![0.0; grid.len()];
    let sx = w as f64 / 2.0;
    let sy = h as f64 / 2.0;
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let gi = ((b * ho + oy) * wo + ox) * 2;
                let t = taps(grid[gi], grid[gi + 1], w, h);
                let (mut dgx, mut dgy) = (0.0, 0.0);
                for ch in 0..c {
                    let go = grad_out[((b * c + ch) * ho + oy) * wo + ox];
                    if go == 0.0 {
                        continue;
                    }
                    let base = (b * c + ch) * h * w;
                    let i00 = base + t.y0 * w + t.x0;
                    let i01 = base + t.y0 * w + t.x1;
                    let i10 = base + t.y1 * w + t.x0;
                    let i11 = base + t.y1 * w + t.x1;
                    g_src[i00] += go * (1.0 - t.fy) * (1.0 - t.fx);
                    g_src[i01] += go * (1.0 - t.fy) * t.fx;
                    g_src[i10] += go * t.fy * (1.0 - t.fx);
                    g_src[i11] += go * t.fy * t.fx;
                    let (v00, v01, v10, v11) = (src[i00], src[i01], src[i10], src[i11]);
                    dgx += go * ((1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                    dgy += go * ((1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                }
                if t.dx_active {
                    g_grid[gi] = dgx * sx;
                }
                if t.dy_active {
                    g_grid[gi + 1] = dgy * sy;
                }
            }
        }
    }
    (g_src, g_grid)
}

fn storage_to_f64(s: &CpuStorage, l: &Layout) -> candle_core::Result<Vec<f64>> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("grid_sample expects contiguous inputs".into()))?;
    Ok(match s {
        CpuStorage::F32(v) => v[start..end].iter().map(|&x| x as f64).collect(),
        CpuStorage::F64(v) => v[start..end].to_vec(),
        other => {
            return Err(candle_core::Error::Msg(format!(
                "grid_sample does not support {:?}",
                other.dtype()
            )))
        }
    })
}

fn to_storage(v: Vec<f64>, dtype: DType) -> CpuStorage {
    match dtype {
        DType::F32 => CpuStorage::F32(v.into_iter().map(|x| x as f32).collect()),
        _ => CpuStorage::F64(v),
    }
}

struct GridSampleOp;

impl CustomOp2 for GridSampleOp {
    fn name(&self) -> &'static str {
        "grid-sample-bilinear-border"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l1.shape().dims4()?;
        let (gn, ho, wo, two) = l2.shape().dims4()?;
        if gn != n || two != 2 {
            candle_core::bail!(
                "grid shape {:?} incompatible with input {:?}",
                l2.shape(),
                l1.shape()
            );
        }
        let src = storage_to_f64(s1, l1)?;
        let grid = storage_to_f64(s2, l2)?;
        let out = forward_impl(&src, &grid, (n, c, h, w), (ho, wo));
        Ok((to_storage(out, s1.dtype()), Shape::from((n, c, ho, wo))))
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let dims = arg1.dims4()?;
        let (_, ho, wo, _) = arg2.dims4()?;
        let flat = |t: &Tensor| t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>();
        let (g_src, g_grid) =
            backward_impl(&flat(arg1)?, &flat(arg2)?, &flat(grad_res)?, dims, (ho, wo));
        let g_src = Tensor::from_vec(g_src, arg1.shape(), arg1.device())?.to_dtype(arg1.dtype())?;
        let g_grid =
            Tensor::from_vec(g_grid, arg2.shape(), arg2.device())?.to_dtype(arg2.dtype())?;
        Ok((Some(g_src), Some(g_grid)))
    }
}

/// Bilinear resampling of `input` `(N, C, H, W)` at `grid` `(N, Ho, Wo, 2)`,
/// where `grid[..., 0]` is x and `grid[..., 1]` is y. Differentiable in both.
pub fn grid_sample(input: &Tensor, grid: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 || grid.rank() != 4 || grid.dim(3)? != 2 {
        return Err(Error::shape(
            "(N,C,H,W) input and (N,Ho,Wo,2) grid",
            format!("{:?} and {:?}", input.dims(), grid.dims()),
        ));
    }
    if input.dim(0)? != grid.dim(0)? {
        return Err(Error::shape(
            "matching batch sizes",
            format!("{} vs {}", input.dim(0)?, grid.dim(0)?),
        ));
    }
    let grid = grid.to_dtype(input.dtype())?;
    Ok(input
        .contiguous()?
        .apply_op2(&grid.contiguous()?, GridSampleOp)?)
}

/// Normalized coordinate of the centre of texel `i` along a side of length `n`.
pub fn texel_center(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// The grid that reproduces its input: `(1, H, W, 2)`.
pub fn identity_grid(
    h: usize,
    w: usize,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            data.push(texel_center(x, w));
            data.push(texel_center(y, h));
        }
    }
    Ok(Tensor::from_vec(data, (1, h, w, 2), device)?.to_dtype(dtype)?)
}
