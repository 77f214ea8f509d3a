use super::BinaryMask;

/// 8-connected component labels (`0` = background, components numbered
/// from 1 in raster-scan order of their first pixel) and the component count.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (h, w) = mask.shape();
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Erase every 8-connected component with fewer than `min_area` pixels.
pub fn remove_small_regions(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let (labels, count) = label_components(mask);
    let mut areas = vec![0usize; count + 1];
    for &l in &labels {
        areas[l as usize] += 1;
    }
    let mut out = mask.clone();
    for (v, &l) in out.data_mut().iter_mut().zip(&labels) {
        if l != 0 && areas[l as usize] < min_area {
            *v = false;
        }
    }
    out
}
