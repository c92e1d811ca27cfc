use crate::error::{Error, Result};
use crate::refiner::{blend, refiner_forward, RefinerNet};
use crate::sampler::{grid_sample, sampler_forward, NormalMap, SamplerNet, SamplingGrid};
use crate::uv::{
    compose_symmetric, mirror_texture, occlusion_mask, project_to_uv, Atlas, Image, IuvMap, Mask,
    TextureMap,
};

/// What inference starts from.
#[derive(Debug, Clone)]
pub enum InferInput {
    /// A person image with its dense correspondence map, projected into a
    /// texture of side `size`.
    Image {
        image: Image,
        iuv: IuvMap,
        size: usize,
    },
    /// A partial texture and the mask of its observed texels.
    Partial { texture: TextureMap, mask: Mask },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InferOptions {
    /// Run the sampler only; the result is `T_sample`.
    pub sampler_only: bool,
    /// Replaces the predicted blending mask with a constant.
    pub blend_override: Option<f32>,
}

/// Final texture plus every intermediate.
#[derive(Debug, Clone)]
pub struct InferOutput {
    pub t_partial: TextureMap,
    pub m_partial: Mask,
    pub t_input: TextureMap,
    pub m_vis: Mask,
    pub grid: SamplingGrid,
    pub t_sample: TextureMap,
    pub m_occ: Mask,
    pub t_refine: Option<TextureMap>,
    pub m_blend: Option<Mask>,
    pub t_final: TextureMap,
}

/// Completes a texture. Every output texture is zero outside the atlas.
pub fn infer(
    input: &InferInput,
    normal: Option<&NormalMap>,
    atlas: &Atlas,
    sampler: &SamplerNet,
    refiner: Option<&RefinerNet>,
    opts: &InferOptions,
) -> Result<InferOutput> {
    if let Some(b) = opts.blend_override {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidInput(format!(
                "blend override {b} outside [0, 1]"
            )));
        }
    }
    let (t_partial, m_partial) = match input {
        InferInput::Image { image, iuv, size } => project_to_uv(image, iuv, atlas, *size)?,
        InferInput::Partial { texture, mask } => {
            texture.check_mask(mask)?;
            (texture.clone(), mask.clone())
        }
    };
    let size = t_partial.size();
    sampler.config().check_resolution(size)?;
    let m_uv = atlas.uv_mask(size);
    let m_partial = m_partial.binarized(0.5).intersection(&m_uv);
    let t_partial = t_partial.masked(&m_partial)?;
    let (t_mirror, m_mirror) = mirror_texture(&t_partial, &m_partial, atlas)?;
    let t_input = compose_symmetric(&t_partial, &m_partial, &t_mirror)?;
    let m_vis = m_partial.union(&m_mirror);

    let flat;
    let normal = match normal {
        Some(n) => n,
        None => {
            flat = NormalMap::flat(size);
            &flat
        }
    };
    let grid = sampler_forward(sampler, &t_input, &m_vis, normal)?;
    let t_sample = grid_sample(&t_input, &grid)?.masked(&m_uv)?;
    let m_occ = occlusion_mask(&m_uv, &m_vis)?;

    let (t_refine, m_blend, t_final) = match (refiner, opts.sampler_only) {
        (Some(r), false) => {
            let (t_refine, predicted) = refiner_forward(r, &t_sample, &m_occ)?;
            let m_blend = match opts.blend_override {
                Some(b) => Mask::new(ndarray::Array2::from_elem((size, size), b))?,
                None => predicted,
            };
            let t_final = blend(&t_sample, &t_refine, &m_blend)?.masked(&m_uv)?;
            (Some(t_refine.masked(&m_uv)?), Some(m_blend), t_final)
        }
        (None, false) => {
            return Err(Error::InvalidInput(
                "no refiner given; pass one or request sampler-only inference".into(),
            ))
        }
        (_, true) => (None, None, t_sample.clone()),
    };
    Ok(InferOutput {
        t_partial,
        m_partial,
        t_input,
        m_vis,
        grid,
        t_sample,
        m_occ,
        t_refine,
        m_blend,
        t_final,
    })
}
