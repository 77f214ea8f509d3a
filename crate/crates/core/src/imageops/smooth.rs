use super::{BinaryMask, Raster};

/// Normalised 1-D Gaussian weights over `[-r, r]`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian blur with reflect padding. `sigma == 0` is the identity.
pub fn gaussian_smooth(raster: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return raster.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = raster.shape();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &raster.data[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * row[reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    Raster {
        height: h,
        width: w,
        data: out,
    }
}

/// Blur a binary mask and re-binarise at 0.5; removes speckle and jagged edges.
pub fn smooth_binary(mask: &BinaryMask, sigma: f64) -> BinaryMask {
    if sigma <= 0.0 {
        return mask.clone();
    }
    BinaryMask::from_raster(&gaussian_smooth(&mask.to_raster(), sigma), 0.5)
}
