//! Initial synthesis: nuclei-free background, nuclear-coloured foreground
//! texture and a random polygon mask, blended into a patch whose nucleus
//! mask is known exactly.

mod mask;
mod params;
mod segment;

pub use mask::{
    generate_nucleus_mask, random_polygon, random_quad_warp, Homography, NucleusMask, Polygon,
    PolygonSet, ATTEMPTS_PER_POLYGON, CLEARED_LEVEL, SNAP_EPS,
};
pub use params::{
    choose_percentile, Bucket, Magnification, PercentileTable, SynthesisParams, CELLULARITY_AREA,
};
pub use segment::{
    generate_background, generate_foreground_texture, nuclear_color, segment_at_threshold,
    segment_nuclei, sub_segment, super_segment, ForegroundTexture, NuclearColor, Segmentation,
    DEFAULT_NUCLEAR_RGB, MIN_COLOR_PIXELS, TEXTURE_AMPLITUDE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{composite, BinaryMask, RgbImage, SoftMask};

/// A real source patch and the style group it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPatch {
    pub id: String,
    pub style_id: String,
    pub image: RgbImage,
}

impl RealPatch {
    pub fn new(id: impl Into<String>, style_id: impl Into<String>, image: RgbImage) -> Self {
        Self {
            id: id.into(),
            style_id: style_id.into(),
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub background_source: String,
    pub texture_source: String,
    /// Top-left `(y, x)` of the crop taken from each source.
    pub background_offset: (usize, usize),
    pub texture_offset: (usize, usize),
    pub fallback_color: bool,
    pub polygons_requested: usize,
    pub polygons_placed: usize,
    pub mask_saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RgbImage,
    pub gt_mask: BinaryMask,
    pub soft_mask: SoftMask,
    pub style_id: String,
    pub params_used: SynthesisParams,
    pub provenance: Provenance,
    /// Intermediate layers, kept so callers can check the blend.
    pub background: RgbImage,
    pub foreground: RgbImage,
    pub polygons: PolygonSet,
}

/// Square `size` crop at a random offset.
fn random_crop<R: Rng>(
    img: &RgbImage,
    size: usize,
    rng: &mut R,
) -> Result<(RgbImage, (usize, usize))> {
    let (h, w) = img.shape();
    if h < size || w < size {
        return Err(Error::Shape(format!(
            "source {h}x{w} is smaller than patch size {size}"
        )));
    }
    let oy = rng.random_range(0..=h - size);
    let ox = rng.random_range(0..=w - size);
    if (h, w) == (size, size) {
        return Ok((img.clone(), (0, 0)));
    }
    let crop = RgbImage::from_fn(size, size, |y, x| img.pixel(y + oy, x + ox))?;
    Ok((crop, (oy, ox)))
}

/// One initial synthetic patch, fully determined by the two sources and
/// `params` (including `params.rng_seed`).
pub fn synthesize_patch(
    bg: &RealPatch,
    tex: &RealPatch,
    params: &SynthesisParams,
) -> Result<SynthSample> {
    params.validate()?;
    if bg.style_id != tex.style_id {
        return Err(Error::Invalid(format!(
            "sources belong to different styles ({} vs {})",
            bg.style_id, tex.style_id
        )));
    }
    if bg.id == tex.id {
        return Err(Error::Invalid(format!(
            "texture source must differ from background source {}",
            bg.id
        )));
    }
    let size = params.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (bg_img, bg_off) = random_crop(&bg.image, size, &mut rng)?;
    let (tex_img, tex_off) = random_crop(&tex.image, size, &mut rng)?;

    let background = generate_background(&bg_img, params)?;
    let fg = generate_foreground_texture(&tex_img, &bg_img, params)?;
    let mask = generate_nucleus_mask(params, size, &mut rng);
    let image = composite(&fg.image, &background, &mask.soft)?;

    Ok(SynthSample {
        image,
        gt_mask: mask.gt,
        soft_mask: mask.soft,
        style_id: bg.style_id.clone(),
        params_used: params.clone(),
        provenance: Provenance {
            background_source: bg.id.clone(),
            texture_source: tex.id.clone(),
            background_offset: bg_off,
            texture_offset: tex_off,
            fallback_color: fg.color.fallback,
            polygons_requested: mask.requested,
            polygons_placed: mask.polygons.len(),
            mask_saturated: mask.saturated,
        },
        background,
        foreground: fg.image,
        polygons: mask.polygons,
    })
}
