//! Fast-marching inpainting (Telea-style boundary propagation).
//!
//! Hole pixels are visited in order of their arrival time `T` from the hole
//! boundary. Each is filled with a positively weighted average of already
//! valued pixels within [`INPAINT_RADIUS`], using Telea's direction, distance
//! and level-set weights. The first-order gradient correction is omitted, so
//! every fill is a convex combination of known values.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

/// Neighbourhood radius in pixels used for each fill.
pub const INPAINT_RADIUS: usize = 5;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(PartialEq)]
struct Entry {
    t: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on T, deterministic tie-break on index
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn inpaint(img: &RgbImage, holes: &BinaryMask) -> Result<RgbImage> {
    if img.shape() != holes.shape() {
        return Err(Error::Shape(format!(
            "inpaint: image {:?} vs holes {:?}",
            img.shape(),
            holes.shape()
        )));
    }
    let n_holes = holes.count();
    if n_holes == 0 {
        return Ok(img.clone());
    }
    if n_holes == img.pixel_count() {
        return Err(Error::NothingToPropagate);
    }

    let (h, w) = img.shape();
    let mut out = img.clone();
    let mut flag: Vec<Flag> = holes
        .data()
        .iter()
        .map(|&hole| if hole { Flag::Inside } else { Flag::Known })
        .collect();
    let mut t = vec![f64::INFINITY; h * w];
    let mut heap = BinaryHeap::new();

    let neighbours = |i: usize| {
        let (y, x) = (i / w, i % w);
        let mut v = [None; 4];
        if y > 0 {
            v[0] = Some(i - w);
        }
        if y + 1 < h {
            v[1] = Some(i + w);
        }
        if x > 0 {
            v[2] = Some(i - 1);
        }
        if x + 1 < w {
            v[3] = Some(i + 1);
        }
        v
    };

    for i in 0..h * w {
        if flag[i] == Flag::Known {
            t[i] = 0.0;
            let touches_hole = neighbours(i)
                .iter()
                .flatten()
                .any(|&j| flag[j] == Flag::Inside);
            if touches_hole {
                flag[i] = Flag::Band;
                heap.push(Entry { t: 0.0, idx: i });
            }
        }
    }

    while let Some(Entry { idx, .. }) = heap.pop() {
        if flag[idx] == Flag::Known {
            continue;
        }
        flag[idx] = Flag::Known;
        for q in neighbours(idx).into_iter().flatten() {
            if flag[q] != Flag::Inside {
                continue;
            }
            t[q] = solve_arrival(q, h, w, &t, &flag);
            let value = fill_value(q, h, w, &t, &flag, &out);
            out.set_pixel_at(q, value);
            flag[q] = Flag::Band;
            heap.push(Entry { t: t[q], idx: q });
        }
    }
    Ok(out)
}

/// Upwind eikonal update from the valued 4-neighbours.
fn solve_arrival(q: usize, h: usize, w: usize, t: &[f64], flag: &[Flag]) -> f64 {
    let (y, x) = (q / w, q % w);
    let valued = |j: usize| {
        if flag[j] != Flag::Inside {
            t[j]
        } else {
            f64::INFINITY
        }
    };
    let mut a = f64::INFINITY;
    if x > 0 {
        a = a.min(valued(q - 1));
    }
    if x + 1 < w {
        a = a.min(valued(q + 1));
    }
    let mut b = f64::INFINITY;
    if y > 0 {
        b = b.min(valued(q - w));
    }
    if y + 1 < h {
        b = b.min(valued(q + w));
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) if (a - b).abs() < 1.0 => {
            let d = a - b;
            0.5 * (a + b + (2.0 - d * d).sqrt())
        }
        (true, true) => a.min(b) + 1.0,
        (true, false) => a + 1.0,
        (false, true) => b + 1.0,
        (false, false) => f64::INFINITY,
    }
}

/// Normalised gradient of `T` at `q` from valued neighbours, if any.
fn arrival_gradient(q: usize, h: usize, w: usize, t: &[f64], flag: &[Flag]) -> Option<(f64, f64)> {
    let (y, x) = (q / w, q % w);
    let ok = |j: usize| flag[j] != Flag::Inside && t[j].is_finite();
    let gx = match (x > 0 && ok(q - 1), x + 1 < w && ok(q + 1)) {
        (true, true) => 0.5 * (t[q + 1] - t[q - 1]),
        (true, false) => t[q] - t[q - 1],
        (false, true) => t[q + 1] - t[q],
        _ => 0.0,
    };
    let gy = match (y > 0 && ok(q - w), y + 1 < h && ok(q + w)) {
        (true, true) => 0.5 * (t[q + w] - t[q - w]),
        (true, false) => t[q] - t[q - w],
        (false, true) => t[q + w] - t[q],
        _ => 0.0,
    };
    let norm = (gx * gx + gy * gy).sqrt();
    (norm > 1e-12).then(|| (gx / norm, gy / norm))
}

fn fill_value(q: usize, h: usize, w: usize, t: &[f64], flag: &[Flag], img: &RgbImage) -> [f64; 3] {
    let (qy, qx) = ((q / w) as isize, (q % w) as isize);
    let r = INPAINT_RADIUS as isize;
    let grad = arrival_gradient(q, h, w, t, flag);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (ky, kx) = (qy + dy, qx + dx);
            if (dy == 0 && dx == 0) || ky < 0 || kx < 0 || ky >= h as isize || kx >= w as isize {
                continue;
            }
            let d2 = (dy * dy + dx * dx) as f64;
            if d2 > (r * r) as f64 {
                continue;
            }
            let k = ky as usize * w + kx as usize;
            if flag[k] == Flag::Inside {
                continue;
            }
            let dist = d2.sqrt();
            // vector from k towards q
            let (vy, vx) = (-(dy as f64), -(dx as f64));
            let dir = match grad {
                Some((gx, gy)) => ((vx * gx + vy * gy) / dist).abs().max(0.01),
                None => 1.0,
            };
            let dst = 1.0 / d2;
            let lev = 1.0 / (1.0 + (t[k] - t[q]).abs());
            let wk = dir * dst * lev;
            let px = img.pixel_at(k);
            for c in 0..3 {
                acc[c] += wk * px[c];
            }
            wsum += wk;
        }
    }
    debug_assert!(wsum > 0.0, "a filled pixel always has a valued neighbour");
    acc.map(|v| (v / wsum).clamp(0.0, 1.0))
}
