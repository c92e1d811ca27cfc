use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, Axis, Zip};

use crate::error::{Error, Result};

/// Square RGB texture in the canonical UV space, values in `[0, 1]`,
/// stored row-major as `(height, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    data: Array3<f32>,
}

/// Single-channel texel mask in `[0, 1]`, stored as `(height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: Array2<f32>,
}

fn check_unit_range<'a>(values: impl IntoIterator<Item = &'a f32>) -> Result<()> {
    for &v in values {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!(
                "value {v} outside the unit interval"
            )));
        }
    }
    Ok(())
}

impl TextureMap {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 {
            return Err(Error::shape("3 channels", format!("{c} channels")));
        }
        if h != w {
            return Err(Error::shape("square texture", format!("{h}x{w}")));
        }
        check_unit_range(data.iter())?;
        Ok(Self { data })
    }

    /// Builds a texture, clamping every value into `[0, 1]` and mapping NaN to 0.
    pub fn from_clamped(mut data: Array3<f32>) -> Result<Self> {
        data.mapv_inplace(clamp_unit);
        Self::new(data)
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            data: Array3::zeros((size, size, 3)),
        }
    }

    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let mut t = Self::zeros(size);
        for c in 0..3 {
            t.data.index_axis_mut(Axis(2), c).fill(clamp_unit(rgb[c]));
        }
        t
    }

    pub fn size(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[[y, x, c]] = clamp_unit(v);
        }
    }

    /// Texel-wise product with a mask, broadcast over channels.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        self.check_mask(mask)?;
        let mut out = self.data.clone();
        for c in 0..3 {
            let mut plane = out.index_axis_mut(Axis(2), c);
            plane *= &mask.data;
        }
        Ok(Self { data: out })
    }

    pub(crate) fn check_mask(&self, mask: &Mask) -> Result<()> {
        if mask.size() != self.size() {
            return Err(Error::shape(
                format!("{0}x{0} mask", self.size()),
                format!("{0}x{0} mask", mask.size()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: &TextureMap) -> Result<()> {
        if other.size() != self.size() {
            return Err(Error::shape(
                format!("{0}x{0} texture", self.size()),
                format!("{0}x{0} texture", other.size()),
            ));
        }
        Ok(())
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let n = self.size();
        let chw = self.data.view().permuted_axes([2, 0, 1]);
        let flat: Vec<f32> = chw.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (1, 3, n, n), device)?.to_dtype(dtype)?)
    }

    /// Reads a `(3, H, W)` or `(1, 3, H, W)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            3 => t.clone(),
            r => return Err(Error::shape("rank 3 or 4 tensor", format!("rank {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::shape("3 channels", format!("{c} channels")));
        }
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let chw = Array3::from_shape_vec((c, h, w), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_clamped(chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned())
    }

    pub fn max_abs_diff(&self, other: &TextureMap) -> f32 {
        Zip::from(&self.data)
            .and(&other.data)
            .fold(0.0f32, |m, a, b| m.max((a - b).abs()))
    }
}

impl Mask {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if h != w {
            return Err(Error::shape("square mask", format!("{h}x{w}")));
        }
        check_unit_range(data.iter())?;
        Ok(Self { data })
    }

    pub fn from_clamped(mut data: Array2<f32>) -> Result<Self> {
        data.mapv_inplace(clamp_unit);
        Self::new(data)
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            data: Array2::zeros((size, size)),
        }
    }

    pub fn ones(size: usize) -> Self {
        Self {
            data: Array2::ones((size, size)),
        }
    }

    pub fn size(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[[y, x]]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[[y, x]] = clamp_unit(v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// True when `self <= other` texel-wise.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.size() == other.size() && Zip::from(&self.data).and(&other.data).all(|&a, &b| a <= b)
    }

    /// Maps every texel to 1 when it exceeds `threshold`, else 0.
    pub fn binarized(&self, threshold: f32) -> Mask {
        Mask {
            data: self.data.mapv(|v| if v > threshold { 1.0 } else { 0.0 }),
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            data: Zip::from(&self.data)
                .and(&other.data)
                .map_collect(|&a, &b| a.max(b)),
        }
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        Mask {
            data: Zip::from(&self.data)
                .and(&other.data)
                .map_collect(|&a, &b| a.min(b)),
        }
    }

    /// `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let n = self.size();
        let flat: Vec<f32> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (1, 1, n, n), device)?.to_dtype(dtype)?)
    }

    /// Reads a `(H, W)`, `(1, H, W)` or `(1, 1, H, W)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        let (h, w) = match dims.as_slice() {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
            _ => return Err(Error::shape("single-channel tensor", format!("{dims:?}"))),
        };
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let data =
            Array2::from_shape_vec((h, w), flat).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_clamped(data)
    }
}

pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Per-pixel body-part correspondence: a part index (0 = background, 1..=24 foreground)
/// and normalized `(u, v)` coordinates inside that part.
#[derive(Debug, Clone, PartialEq)]
pub struct IuvMap {
    parts: Array2<u8>,
    uv: Array3<f32>,
}

impl IuvMap {
    pub fn new(parts: Array2<u8>, uv: Array3<f32>) -> Result<Self> {
        let (h, w) = parts.dim();
        if uv.dim() != (h, w, 2) {
            return Err(Error::shape(
                format!("({h}, {w}, 2) uv array"),
                format!("{:?}", uv.dim()),
            ));
        }
        if let Some(&p) = parts.iter().find(|&&p| p as usize > crate::uv::PART_COUNT) {
            return Err(Error::InvalidInput(format!("part index {p} out of range")));
        }
        check_unit_range(uv.iter())?;
        Ok(Self { parts, uv })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            parts: Array2::zeros((height, width)),
            uv: Array3::zeros((height, width, 2)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.parts.dim()
    }

    pub fn part(&self, y: usize, x: usize) -> u8 {
        self.parts[[y, x]]
    }

    pub fn uv(&self, y: usize, x: usize) -> (f32, f32) {
        (self.uv[[y, x, 0]], self.uv[[y, x, 1]])
    }

    pub fn parts(&self) -> &Array2<u8> {
        &self.parts
    }

    pub fn uv_array(&self) -> &Array3<f32> {
        &self.uv
    }
}

/// An RGB photograph (not necessarily square), values in `[0, 1]`, `(height, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Array3<f32>,
}

impl Image {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::shape("3 channels", format!("{}", data.dim().2)));
        }
        check_unit_range(data.iter())?;
        Ok(Self { data })
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.data.dim();
        (h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_non_square() {
        assert!(TextureMap::new(Array3::from_elem((4, 4, 3), 1.5)).is_err());
        assert!(TextureMap::new(Array3::zeros((4, 5, 3))).is_err());
        assert!(Mask::new(Array2::from_elem((3, 3), f32::NAN)).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let mut t = TextureMap::zeros(4);
        t.set(1, 2, [0.25, 0.5, 0.75]);
        let back =
            TextureMap::from_tensor(&t.to_tensor(DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_eq!(back, t);
        let mut m = Mask::zeros(4);
        m.set(3, 0, 1.0);
        let back = Mask::from_tensor(&m.to_tensor(DType::F64, &Device::Cpu).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn iuv_rejects_bad_part() {
        let parts = Array2::from_elem((2, 2), 25u8);
        assert!(IuvMap::new(parts, Array3::zeros((2, 2, 2))).is_err());
    }
}
