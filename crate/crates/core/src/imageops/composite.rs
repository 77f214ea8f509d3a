use super::{RgbImage, SoftMask};
use crate::error::{Error, Result};

/// Per-pixel blend `I = A·M + B·(1 − M)`, applied to each channel.
pub fn composite(a: &RgbImage, b: &RgbImage, m: &SoftMask) -> Result<RgbImage> {
    if a.shape() != b.shape() || a.shape() != m.shape() {
        return Err(Error::Shape(format!(
            "composite: A {:?}, B {:?}, M {:?}",
            a.shape(),
            b.shape(),
            m.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len());
    for ((pa, pb), &mv) in a
        .data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .zip(m.data())
    {
        for c in 0..3 {
            // clamp only absorbs rounding at the [0,1] edges
            data.push((pa[c] * mv + pb[c] * (1.0 - mv)).clamp(0.0, 1.0));
        }
    }
    RgbImage::new(a.height(), a.width(), data)
}
