use serde::{Deserialize, Serialize};

use super::params::{PercentileTable, SynthesisParams};
use crate::error::Result;
use crate::imageops::{
    inpaint, percentile_threshold, remove_small_regions, rgb_to_hed, smooth_binary,
    table_h_statistic, BinaryMask, RgbImage,
};

/// Nuclear colour used when a patch has too few sub-segmented pixels to
/// estimate one.
pub const DEFAULT_NUCLEAR_RGB: [f64; 3] = [0.36, 0.22, 0.52];

/// Fewer sub-segmented pixels than this triggers [`DEFAULT_NUCLEAR_RGB`].
pub const MIN_COLOR_PIXELS: usize = 16;

/// Relative amplitude of the eosin texture imprinted on the nuclear colour.
pub const TEXTURE_AMPLITUDE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Mean-H statistic used for the table lookup.
    pub h_statistic: f64,
    pub p: f64,
    /// Raw H-density cut; pixels at or above it were selected before cleanup.
    pub threshold: f64,
    pub degenerate: bool,
    pub mask: BinaryMask,
}

/// Threshold the H channel at the table-chosen top fraction, then smooth the
/// binary mask and drop tiny regions.
pub fn segment_nuclei(
    source: &RgbImage,
    table: &PercentileTable,
    params: &SynthesisParams,
) -> Segmentation {
    let stains = params.stains();
    let h_statistic = table_h_statistic(source, &stains);
    let p = table.lookup(h_statistic);
    let hchan = rgb_to_hed(source, &stains).hematoxylin();
    let th = percentile_threshold(&hchan, p);
    let mask = clean_mask(&th.mask, params);
    Segmentation {
        h_statistic,
        p,
        threshold: th.t,
        degenerate: th.degenerate,
        mask,
    }
}

fn clean_mask(raw: &BinaryMask, params: &SynthesisParams) -> BinaryMask {
    let smoothed = smooth_binary(raw, params.scaled_smooth_sigma());
    remove_small_regions(&smoothed, params.scaled_min_area())
}

/// Segmentation at a fixed H-density cut with the same cleanup as
/// [`segment_nuclei`]; used to re-check an image against an earlier cut.
pub fn segment_at_threshold(
    source: &RgbImage,
    threshold: f64,
    params: &SynthesisParams,
) -> BinaryMask {
    let hchan = rgb_to_hed(source, &params.stains()).hematoxylin();
    let raw = BinaryMask::from_raster(&hchan, threshold);
    clean_mask(&raw, params)
}

pub fn super_segment(source: &RgbImage, params: &SynthesisParams) -> Segmentation {
    segment_nuclei(source, &params.super_p_table, params)
}

pub fn sub_segment(source: &RgbImage, params: &SynthesisParams) -> Segmentation {
    segment_nuclei(source, &params.sub_p_table, params)
}

/// Source patch with its nuclei inpainted away.
pub fn generate_background(source: &RgbImage, params: &SynthesisParams) -> Result<RgbImage> {
    let seg = super_segment(source, params);
    inpaint(source, &seg.mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearColor {
    pub rgb: [f64; 3],
    pub pixels: usize,
    pub fallback: bool,
}

/// Mean RGB of the sub-segmented pixels of `source`.
pub fn nuclear_color(source: &RgbImage, params: &SynthesisParams) -> NuclearColor {
    let seg = sub_segment(source, params);
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (i, &on) in seg.mask.data().iter().enumerate() {
        if on {
            let px = source.pixel_at(i);
            for c in 0..3 {
                acc[c] += px[c];
            }
            n += 1;
        }
    }
    if n < MIN_COLOR_PIXELS {
        return NuclearColor {
            rgb: DEFAULT_NUCLEAR_RGB,
            pixels: n,
            fallback: true,
        };
    }
    NuclearColor {
        rgb: acc.map(|v| v / n as f64),
        pixels: n,
        fallback: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundTexture {
    pub image: RgbImage,
    pub color: NuclearColor,
}

/// Nuclear colour from `color_source`, modulated by the zero-mean eosin
/// variation of `texture_source`.
pub fn generate_foreground_texture(
    texture_source: &RgbImage,
    color_source: &RgbImage,
    params: &SynthesisParams,
) -> Result<ForegroundTexture> {
    let color = nuclear_color(color_source, params);
    let eosin = rgb_to_hed(texture_source, &params.stains()).eosin();
    let mean = eosin.mean();
    let spread = eosin
        .data
        .iter()
        .fold(0.0f64, |m, v| m.max((v - mean).abs()));
    let (h, w) = texture_source.shape();
    let c = color.rgb;
    let image = RgbImage::from_fn(h, w, |y, x| {
        let v = if spread > 1e-12 {
            (eosin.at(y, x) - mean) / spread
        } else {
            0.0
        };
        c.map(|ch| ch + TEXTURE_AMPLITUDE * v * ch)
    })?;
    Ok(ForegroundTexture { image, color })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eosin_only_patch_keeps_background() {
        let img = RgbImage::filled(16, 16, [0.9, 0.5, 0.7]).unwrap();
        let params = SynthesisParams::default();
        let seg = super_segment(&img, &params);
        assert!(seg.degenerate);
        assert!(seg.mask.is_empty());
        assert_eq!(generate_background(&img, &params).unwrap(), img);
    }

    #[test]
    fn constant_texture_gives_flat_colour() {
        let params = SynthesisParams::default();
        let tex = RgbImage::filled(16, 16, [0.8, 0.6, 0.7]).unwrap();
        // dark disc on pink gives a reliable sub-segmentation
        let src = RgbImage::from_fn(32, 32, |y, x| {
            let d = ((y as f64 - 16.0).powi(2) + (x as f64 - 16.0).powi(2)).sqrt();
            if d < 9.0 {
                [0.3, 0.2, 0.5]
            } else {
                [0.9, 0.7, 0.8]
            }
        })
        .unwrap();
        let tex = RgbImage::from_fn(32, 32, |_, _| tex.pixel(0, 0)).unwrap();
        let fg = generate_foreground_texture(&tex, &src, &params).unwrap();
        assert!(!fg.color.fallback);
        for px in fg.image.data().chunks_exact(3) {
            for c in 0..3 {
                assert!((px[c] - fg.color.rgb[c]).abs() < 1e-12);
            }
        }
        for (got, want) in fg.color.rgb.iter().zip([0.3, 0.2, 0.5]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn blank_colour_source_falls_back() {
        let params = SynthesisParams::default();
        let blank = RgbImage::filled(16, 16, [1.0; 3]).unwrap();
        let fg = generate_foreground_texture(&blank, &blank, &params).unwrap();
        assert!(fg.color.fallback);
        assert_eq!(fg.color.rgb, DEFAULT_NUCLEAR_RGB);
    }
}
