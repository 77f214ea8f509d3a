//! Procedural H&E-like tissue patches with known nuclei.
//!
//! Rendering is Beer-Lambert: each pixel's optical density is a mix of the
//! hematoxylin and eosin stain vectors, with a smooth eosin field for stroma,
//! occasional glass gaps, and dense hematoxylin ellipses for nuclei. Used to
//! build test corpora and demo sources when no scanned patches are supplied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imageops::{gaussian_smooth, BinaryMask, Raster, RgbImage, StainMatrix};
use crate::synth::RealPatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomStyle {
    pub name: String,
    pub stains: StainMatrix,
    /// Hematoxylin density at nucleus centres.
    pub hema: f64,
    /// Mean eosin density of stroma.
    pub eosin: f64,
    /// Correlation length of the stroma texture, in pixels.
    pub texture_sigma: f64,
    /// Nuclei per 10,000 px².
    pub nuclei_density: f64,
    pub radius_range: (f64, f64),
    /// Multiplicative per-pixel noise level.
    pub noise: f64,
}

impl PhantomStyle {
    /// A plain mid-density H&E look.
    pub fn standard(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            stains: StainMatrix::default(),
            hema: 1.1,
            eosin: 0.45,
            texture_sigma: 2.5,
            nuclei_density: 18.0,
            radius_range: (4.0, 7.0),
            noise: 0.02,
        }
    }

    /// A handful of visibly different styles, e.g. for multi-slide corpora.
    pub fn palette() -> Vec<Self> {
        let base = Self::standard("style_a");
        vec![
            base.clone(),
            Self {
                name: "style_b".into(),
                hema: 1.4,
                eosin: 0.7,
                nuclei_density: 28.0,
                ..base.clone()
            },
            Self {
                name: "style_c".into(),
                hema: 0.8,
                eosin: 0.3,
                texture_sigma: 4.0,
                nuclei_density: 10.0,
                radius_range: (5.0, 9.0),
                ..base.clone()
            },
            Self {
                name: "style_d".into(),
                stains: StainMatrix {
                    rows: [[0.55, 0.75, 0.35], [0.12, 0.95, 0.25], [0.27, 0.57, 0.78]],
                },
                ..base
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomPatch {
    pub image: RgbImage,
    pub nuclei: BinaryMask,
}

fn normalized_field<R: Rng>(rng: &mut R, size: usize, sigma: f64) -> Raster {
    let noise = Raster::new(
        size,
        size,
        (0..size * size).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("square raster");
    let mut f = gaussian_smooth(&noise, sigma);
    let (lo, hi) = f
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let span = (hi - lo).max(1e-12);
    for v in f.data.iter_mut() {
        *v = (*v - lo) / span;
    }
    f
}

pub fn render_phantom(style: &PhantomStyle, size: usize, seed: u64) -> Result<PhantomPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stroma = normalized_field(&mut rng, size, style.texture_sigma);
    let grain = normalized_field(&mut rng, size, 1.0);

    let mut hema = vec![0.06 * style.hema; size * size];
    let mut nuclei = BinaryMask::empty(size, size);
    let count = (style.nuclei_density * (size * size) as f64 / 10_000.0).round() as usize;
    let (rmin, rmax) = style.radius_range;
    for _ in 0..count {
        let cx = rng.random_range(0.0..size as f64);
        let cy = rng.random_range(0.0..size as f64);
        let a = rng.random_range(rmin..rmax);
        let b = a * rng.random_range(0.6..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let reach = a.ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (y, x) = (cy.floor() as isize + dy, cx.floor() as isize + dx);
                if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
                    continue;
                }
                let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = (px * c + py * s) / a;
                let v = (-px * s + py * c) / b;
                if u * u + v * v <= 1.0 {
                    let i = y as usize * size + x as usize;
                    nuclei.data_mut()[i] = true;
                    hema[i] = style.hema * (0.75 + 0.5 * grain.data[i]);
                }
            }
        }
    }

    let vh = style.stains.rows[0];
    let ve = style.stains.rows[1];
    let normal = Normal::new(0.0, style.noise.max(0.0)).expect("finite noise");
    let mut data = Vec::with_capacity(size * size * 3);
    for i in 0..size * size {
        let f = stroma.data[i];
        let mut ce = style.eosin * (0.3 + 1.2 * f);
        if f < 0.12 {
            ce *= 0.15; // glass gap
        }
        if nuclei.data()[i] {
            ce *= 0.4;
        }
        let ch = hema[i];
        for k in 0..3 {
            let od = ch * vh[k] + ce * ve[k];
            let n: f64 = normal.sample(&mut rng);
            data.push(((-od).exp() * (1.0 + n)).clamp(0.0, 1.0));
        }
    }
    Ok(PhantomPatch {
        image: RgbImage::new(size, size, data)?,
        nuclei,
    })
}

/// `count` phantom patches of one style, ids `{style}_{index:05}`.
pub fn phantom_corpus(
    style: &PhantomStyle,
    count: usize,
    size: usize,
    base_seed: u64,
) -> Result<Vec<RealPatch>> {
    (0..count)
        .map(|i| {
            let p = render_phantom(style, size, base_seed.wrapping_add(i as u64))?;
            Ok(RealPatch::new(
                format!("{}_{i:05}", style.name),
                style.name.clone(),
                p.image,
            ))
        })
        .collect()
}

/// Nearly uniform patch of one colour with mild pixel noise.
pub fn flat_patch(rgb: [f64; 3], size: usize, noise: f64, seed: u64) -> Result<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let data = (0..size * size * 3)
        .map(|i| (rgb[i % 3] + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    RgbImage::new(size, size, data)
}
