//! Random nucleus masks: star-shaped polygons, one shared perspective warp,
//! rejection to keep them apart, then interior clearing and boundary blur.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::params::{SynthesisParams, CELLULARITY_AREA};
use crate::imageops::{gaussian_smooth, BinaryMask, Raster, SoftMask};

/// Attempts spent on each polygon before giving up on it.
pub const ATTEMPTS_PER_POLYGON: usize = 50;

/// Soft-mask level inside a cleared nucleus core.
pub const CLEARED_LEVEL: f64 = 0.2;

/// After blurring, values this close to 0 or 1 are snapped to it.
pub const SNAP_EPS: f64 = 0.01;

const MIN_VERTICES: usize = 8;
const MAX_VERTICES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    /// `(x, y)` vertices in pixel coordinates, pixel centres at `+0.5`.
    pub vertices: Vec<[f64; 2]>,
    pub centroid: [f64; 2],
    pub mean_radius: f64,
}

impl Polygon {
    fn new(vertices: Vec<[f64; 2]>) -> Self {
        let n = vertices.len() as f64;
        let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n;
        let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n;
        let mean_radius = vertices
            .iter()
            .map(|v| ((v[0] - cx).powi(2) + (v[1] - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        Self {
            vertices,
            centroid: [cx, cy],
            mean_radius,
        }
    }

    /// Even-odd point test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi) = (v[i][0], v[i][1]);
            let (xj, yj) = (v[j][0], v[j][1]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Indices of pixels whose centre lies inside, clipped to the patch.
    pub fn rasterize(&self, size: usize) -> Vec<usize> {
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for v in &self.vertices {
            x0 = x0.min(v[0]);
            x1 = x1.max(v[0]);
            y0 = y0.min(v[1]);
            y1 = y1.max(v[1]);
        }
        let lo = |v: f64| (v - 0.5).floor().max(0.0) as usize;
        let hi = |v: f64| ((v - 0.5).ceil().max(-1.0) + 1.0).min(size as f64) as usize;
        let mut out = Vec::new();
        for y in lo(y0)..hi(y1) {
            for x in lo(x0)..hi(x1) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    out.push(y * size + x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn len(&self) -> usize {
        self.polygons.len()
    }
    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NucleusMask {
    pub polygons: PolygonSet,
    pub gt: BinaryMask,
    pub soft: SoftMask,
    /// Polygon index + 1 per pixel, 0 for background.
    pub labels: Vec<u32>,
    /// Poisson draw of the target count.
    pub requested: usize,
    /// Set when the attempt budget ran out before `requested` was reached.
    pub saturated: bool,
}

/// Projective map fixed by where the four patch corners go.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography([f64; 9]);

impl Homography {
    pub const IDENTITY: Homography = Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    /// Map `src[i]` onto `dst[i]` for the four corners.
    pub fn from_corners(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Option<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let ([x, y], [u, v]) = (src[i], dst[i]);
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        for col in 0..8 {
            let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, piv);
            for row in 0..8 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let mut h = [1.0; 9];
        for i in 0..8 {
            h[i] = a[i][8] / a[i][i];
        }
        Some(Homography(h))
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let h = &self.0;
        let w = h[6] * p[0] + h[7] * p[1] + h[8];
        [
            (h[0] * p[0] + h[1] * p[1] + h[2]) / w,
            (h[3] * p[0] + h[4] * p[1] + h[5]) / w,
        ]
    }
}

/// One random perspective warp of the whole patch; each corner moves by at
/// most `strength * size / 4` per axis.
pub fn random_quad_warp<R: Rng>(rng: &mut R, size: usize, strength: f64) -> Homography {
    let s = size as f64;
    let d = strength * s / 4.0;
    let src = [[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]];
    let mut dst = src;
    for c in dst.iter_mut() {
        c[0] += rng.random_range(-1.0..=1.0) * d;
        c[1] += rng.random_range(-1.0..=1.0) * d;
    }
    if d == 0.0 {
        return Homography::IDENTITY;
    }
    Homography::from_corners(src, dst).unwrap_or(Homography::IDENTITY)
}

/// Star-shaped polygon around `centre` with per-vertex radius
/// `r * (1 + pleomorphism * u)`, `u ~ U[-0.5, 0.5]`.
pub fn random_polygon<R: Rng>(
    rng: &mut R,
    centre: [f64; 2],
    r: f64,
    pleomorphism: f64,
) -> Vec<[f64; 2]> {
    let n = rng.random_range(MIN_VERTICES..=MAX_VERTICES);
    let phase = rng.random_range(0.0..TAU);
    let step = TAU / n as f64;
    (0..n)
        .map(|i| {
            // angular jitter stays below half a step so vertex order is kept
            let jitter = pleomorphism * rng.random_range(-0.4..0.4) * step;
            let u: f64 = rng.random_range(-0.5..=0.5);
            let a = phase + i as f64 * step + jitter;
            let ri = r * (1.0 + pleomorphism * u);
            [centre[0] + ri * a.cos(), centre[1] + ri * a.sin()]
        })
        .collect()
}

pub fn generate_nucleus_mask<R: Rng>(
    params: &SynthesisParams,
    patch_size: usize,
    rng: &mut R,
) -> NucleusMask {
    let size = patch_size;
    let area = (size * size) as f64;
    let lambda = params.cellularity * area / CELLULARITY_AREA;
    let requested = if lambda > 0.0 {
        Poisson::new(lambda)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let warp = random_quad_warp(rng, size, params.quad_distort_strength);
    let (rmin, rmax) = params.radius_range;
    let spacing = if params.cellularity > 0.0 {
        rmin.min(0.5 * (CELLULARITY_AREA / params.cellularity).sqrt())
    } else {
        0.0
    };

    let mut labels = vec![0u32; size * size];
    let mut polygons = Vec::with_capacity(requested);
    let mut centres: Vec<[f64; 2]> = Vec::with_capacity(requested);
    let mut saturated = false;
    for _ in 0..requested {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_POLYGON {
            let c = [
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
            ];
            let r = rng.random_range(rmin..rmax);
            let verts = random_polygon(rng, c, r, params.pleomorphism);
            let too_close = centres
                .iter()
                .any(|o| (o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2) < spacing * spacing);
            if too_close {
                continue;
            }
            let poly = Polygon::new(verts.into_iter().map(|v| warp.apply(v)).collect());
            let pixels = poly.rasterize(size);
            if pixels.is_empty() || touches_other(&pixels, &labels, size) {
                continue;
            }
            let id = polygons.len() as u32 + 1;
            for &i in &pixels {
                labels[i] = id;
            }
            centres.push(c);
            polygons.push(poly);
            placed = true;
            break;
        }
        if !placed {
            saturated = true;
        }
    }

    let gt =
        BinaryMask::new(size, size, labels.iter().map(|&l| l > 0).collect()).expect("square mask");
    let mut soft = gt.to_raster();
    for (k, poly) in polygons.iter().enumerate() {
        if rng.random::<f64>() < params.clearing_prob {
            let depth = ((0.4 * poly.mean_radius).round() as usize).max(1);
            clear_core(&mut soft, &labels, k as u32 + 1, depth);
        }
    }
    let mut soft = gaussian_smooth(&soft, params.boundary_blur_sigma);
    for v in soft.data.iter_mut() {
        *v = if *v >= 1.0 - SNAP_EPS {
            1.0
        } else if *v <= SNAP_EPS {
            0.0
        } else {
            *v
        };
    }
    NucleusMask {
        polygons: PolygonSet { polygons },
        gt,
        soft: SoftMask::new(soft).expect("blur of a [0,1] raster stays in [0,1]"),
        labels,
        requested,
        saturated,
    }
}

/// `true` if any pixel is on, or 8-adjacent to, an existing polygon.
fn touches_other(pixels: &[usize], labels: &[u32], size: usize) -> bool {
    pixels.iter().any(|&i| {
        let (y, x) = ((i / size) as isize, (i % size) as isize);
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0
                    && nx >= 0
                    && (ny as usize) < size
                    && (nx as usize) < size
                    && labels[ny as usize * size + nx as usize] != 0
            })
        })
    })
}

/// Lower the soft mask to [`CLEARED_LEVEL`] on pixels whose whole
/// `(2*depth+1)²` window belongs to polygon `id`.
fn clear_core(soft: &mut Raster, labels: &[u32], id: u32, depth: usize) {
    let size = soft.width;
    let d = depth as isize;
    let mut core = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != id {
            continue;
        }
        let (y, x) = ((i / size) as isize, (i % size) as isize);
        let inside = (-d..=d).all(|dy| {
            (-d..=d).all(|dx| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0
                    && nx >= 0
                    && (ny as usize) < size
                    && (nx as usize) < size
                    && labels[ny as usize * size + nx as usize] == id
            })
        });
        if inside {
            core.push(i);
        }
    }
    for i in core {
        soft.data[i] = CLEARED_LEVEL;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cellularity_is_empty() {
        let p = SynthesisParams {
            cellularity: 0.0,
            ..Default::default()
        };
        let m = generate_nucleus_mask(&p, 32, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.polygons.is_empty());
        assert!(m.gt.is_empty());
        assert!(m.soft.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homography_hits_corners() {
        let src = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        let dst = [[1.0, -0.5], [9.0, 1.0], [11.0, 12.0], [-1.0, 9.0]];
        let h = Homography::from_corners(src, dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let got = h.apply(*s);
            assert!((got[0] - d[0]).abs() < 1e-9 && (got[1] - d[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn square_rasterizes_to_its_pixels() {
        let poly = Polygon::new(vec![[2.0, 2.0], [6.0, 2.0], [6.0, 5.0], [2.0, 5.0]]);
        let px = poly.rasterize(10);
        assert_eq!(px.len(), 12);
        assert!(px.contains(&(2 * 10 + 2)) && px.contains(&(4 * 10 + 5)));
    }

    #[test]
    fn clearing_lowers_core_only() {
        let p = SynthesisParams {
            clearing_prob: 1.0,
            boundary_blur_sigma: 0.0,
            radius_range: (7.0, 8.0),
            ..Default::default()
        };
        let m = generate_nucleus_mask(&p, 64, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(!m.polygons.is_empty());
        for (i, &v) in m.soft.data().iter().enumerate() {
            if m.gt.data()[i] {
                assert!(v == 1.0 || v == CLEARED_LEVEL);
            } else {
                assert_eq!(v, 0.0);
            }
        }
        assert!(m.soft.data().contains(&CLEARED_LEVEL));
    }
}
