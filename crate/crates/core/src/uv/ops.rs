use ndarray::{Array2, Array3, Zip};

use crate::error::{Error, Result};
use crate::uv::atlas::Atlas;
use crate::uv::texture::{Image, IuvMap, Mask, TextureMap};

/// Scatters every foreground pixel of `image` into the UV square of side `size`.
///
/// Pixels that land on the same texel are averaged. The returned mask is 1
/// exactly where at least one pixel was written.
pub fn project_to_uv(
    image: &Image,
    iuv: &IuvMap,
    atlas: &Atlas,
    size: usize,
) -> Result<(TextureMap, Mask)> {
    if image.dim() != iuv.dim() {
        return Err(Error::shape(
            format!("{:?} iuv", image.dim()),
            format!("{:?} iuv", iuv.dim()),
        ));
    }
    let (h, w) = iuv.dim();
    let mut sum = Array3::<f64>::zeros((size, size, 3));
    let mut count = Array2::<u32>::zeros((size, size));
    for y in 0..h {
        for x in 0..w {
            let part = iuv.part(y, x);
            if part == 0 {
                continue;
            }
            let (u, v) = iuv.uv(y, x);
            let (ty, tx) = atlas.texel_of(part, u, v, size);
            for c in 0..3 {
                sum[[ty, tx, c]] += image.data[[y, x, c]] as f64;
            }
            count[[ty, tx]] += 1;
        }
    }
    let mut tex = Array3::<f32>::zeros((size, size, 3));
    Zip::indexed(&mut tex).for_each(|(y, x, c), t| {
        let n = count[[y, x]];
        if n > 0 {
            *t = (sum[[y, x, c]] / n as f64) as f32;
        }
    });
    let mask = count.mapv(|n| if n > 0 { 1.0f32 } else { 0.0 });
    Ok((TextureMap::from_clamped(tex)?, Mask::new(mask)?))
}

/// Looks up the texel addressed by every foreground pixel; background pixels are black.
pub fn render_from_uv(texture: &TextureMap, iuv: &IuvMap, atlas: &Atlas) -> Result<Image> {
    let (h, w) = iuv.dim();
    let size = texture.size();
    let mut data = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let part = iuv.part(y, x);
            if part == 0 {
                continue;
            }
            let (u, v) = iuv.uv(y, x);
            let (ty, tx) = atlas.texel_of(part, u, v, size);
            let rgb = texture.get(ty, tx);
            for c in 0..3 {
                data[[y, x, c]] = rgb[c];
            }
        }
    }
    Image::new(data)
}

/// Copies each part's texels into its mirrored counterpart, reflecting inside
/// the rectangle; the mask travels with the texture. Texels outside every
/// part come out zero.
pub fn mirror_texture(t: &TextureMap, m: &Mask, atlas: &Atlas) -> Result<(TextureMap, Mask)> {
    t.check_mask(m)?;
    let size = t.size();
    let mut out = TextureMap::zeros(size);
    let mut out_mask = Mask::zeros(size);
    for part in atlas.parts() {
        let r = atlas.rect(part.index, size);
        for y in r.y0..r.y0 + r.height {
            for x in r.x0..r.x0 + r.width {
                let (_, my, mx) = atlas.mirror_texel(part.index, y, x, size);
                out.set(my, mx, t.get(y, x));
                out_mask.set(my, mx, m.get(y, x));
            }
        }
    }
    Ok((out, out_mask))
}

/// `t_src + t_mirror ⊙ (1 − m_src)`: fills the unobserved texels of a partial
/// texture from its mirrored copy.
pub fn compose_symmetric(
    t_src: &TextureMap,
    m_src: &Mask,
    t_mirror: &TextureMap,
) -> Result<TextureMap> {
    t_src.check_mask(m_src)?;
    t_src.check_same(t_mirror)?;
    let mut out = t_src.data().clone();
    Zip::indexed(&mut out)
        .and(t_mirror.data())
        .for_each(|(y, x, _), o, &mir| {
            *o += mir * (1.0 - m_src.data()[[y, x]]);
        });
    TextureMap::from_clamped(out)
}

/// `t_gt ⊙ m_src`: the ideally aligned partial texture.
pub fn mask_ground_truth(t_gt: &TextureMap, m_src: &Mask) -> Result<TextureMap> {
    t_gt.masked(m_src)
}

/// `max(m_uv − m_src, 0)`: texels on the body that were not observed.
pub fn occlusion_mask(m_uv: &Mask, m_src: &Mask) -> Result<Mask> {
    if m_uv.size() != m_src.size() {
        return Err(Error::shape(
            format!("{0}x{0} mask", m_uv.size()),
            format!("{0}x{0} mask", m_src.size()),
        ));
    }
    let data = Zip::from(m_uv.data())
        .and(m_src.data())
        .map_collect(|&a, &b| (a - b).max(0.0));
    Mask::new(data)
}

/// IUV image of `size × size` pixels that addresses every texel of every part
/// exactly once, laid out so pixel `(y, x)` addresses texel `(y, x)`.
pub fn exhaustive_iuv(atlas: &Atlas, size: usize) -> IuvMap {
    let parts = atlas.part_index_map(size);
    let mut uv = Array3::<f32>::zeros((size, size, 2));
    for y in 0..size {
        for x in 0..size {
            let p = parts[[y, x]];
            if p > 0 {
                let (u, v) = atlas.uv_of_texel(p, y, x, size);
                uv[[y, x, 0]] = u;
                uv[[y, x, 1]] = v;
            }
        }
    }
    IuvMap::new(parts, uv).expect("atlas geometry yields a valid IUV map")
}
