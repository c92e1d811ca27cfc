//! PNG encodings for textures, masks, photographs and IUV maps.
//!
//! Textures, normals and masks are 8-bit, values mapped linearly from `[0, 1]`
//! to `0..=255`. IUV maps are 16-bit RGB: red holds the part index, green and
//! blue hold `u` and `v` quantized as `round(x · 65535)`.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::uv::texture::{Image, IuvMap, Mask, TextureMap};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

fn array_to_rgb(data: &Array3<f32>) -> RgbImage {
    let (h, w, _) = data.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            to_u8(data[[y, x, 0]]),
            to_u8(data[[y, x, 1]]),
            to_u8(data[[y, x, 2]]),
        ])
    })
}

pub fn save_texture(t: &TextureMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    array_to_rgb(t.data()).save(path).map_err(image_err(path))
}

pub fn load_texture(path: &Path) -> Result<TextureMap> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    TextureMap::new(rgb_to_array(&img))
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    array_to_rgb(&img.data).save(path).map_err(image_err(path))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    Image::new(rgb_to_array(&img))
}

pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let n = m.size() as u32;
    GrayImage::from_fn(n, n, |x, y| {
        image::Luma([to_u8(m.get(y as usize, x as usize))])
    })
    .save(path)
    .map_err(image_err(path))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::new(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
    }))
}

pub fn save_iuv(iuv: &IuvMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = iuv.dim();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let (u, v) = iuv.uv(y, x);
        Rgb([iuv.part(y, x) as u16, q(u), q(v)])
    });
    img.save(path).map_err(image_err(path))
}

pub fn load_iuv(path: &Path) -> Result<IuvMap> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb16();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut parts = Array2::<u8>::zeros((h, w));
    let mut uv = Array3::<f32>::zeros((h, w, 2));
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        let p = u8::try_from(px[0])
            .map_err(|_| Error::InvalidInput(format!("part index {} out of range", px[0])))?;
        parts[[y, x]] = p;
        uv[[y, x, 0]] = px[1] as f32 / 65535.0;
        uv[[y, x, 1]] = px[2] as f32 / 65535.0;
    }
    IuvMap::new(parts, uv)
}
