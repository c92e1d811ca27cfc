//! Texture-space image quality metrics.

use crate::error::{Error, Result};
use crate::nn::extractor::FeatureExtractor;
use crate::uv::TextureMap;

/// Reported when the two inputs are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// `10 · log10(1 / MSE)` over all texels and channels, capped at 99 dB.
pub fn psnr(a: &TextureMap, b: &TextureMap) -> Result<f64> {
    a.check_same(b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Rec. 601 luma.
pub fn luminance(t: &TextureMap) -> Vec<f64> {
    let d = t.data();
    let n = t.size();
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            out.push(
                0.299 * d[[y, x, 0]] as f64
                    + 0.587 * d[[y, x, 1]] as f64
                    + 0.114 * d[[y, x, 2]] as f64,
            );
        }
    }
    out
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `n × n` image.
fn filter_valid(img: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let m = n - k + 1;
    let mut rows = vec![0.0; n * m];
    for y in 0..n {
        for x in 0..m {
            rows[y * m + x] = (0..k).map(|i| w[i] * img[y * n + x + i]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            out[y * m + x] = (0..k).map(|i| w[i] * rows[(y + i) * m + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of the luma channels over all full 11×11
/// Gaussian windows.
pub fn ssim(a: &TextureMap, b: &TextureMap) -> Result<f64> {
    a.check_same(b)?;
    let n = a.size();
    if n < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} inputs, got {n}x{n}"
        )));
    }
    let w = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let la = luminance(a);
    let lb = luminance(b);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, n, &w);
    let mu_b = filter_valid(&lb, n, &w);
    let e_aa = filter_valid(&prod(&la, &la), n, &w);
    let e_bb = filter_valid(&prod(&lb, &lb), n, &w);
    let e_ab = filter_valid(&prod(&la, &lb), n, &w);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Feature-space distance through a fixed extractor; see
/// [`crate::sampler::perceptual_distance`].
pub fn perceptual_metric(
    a: &TextureMap,
    b: &TextureMap,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    crate::sampler::perceptual_distance(a, b, extractor)
}
