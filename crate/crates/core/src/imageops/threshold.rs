use super::{BinaryMask, Raster};

/// Channels whose value range is below this are treated as constant.
const DEGENERATE_RANGE: f64 = 1e-9;

/// Outcome of [`percentile_threshold`].
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    /// Selected pixels are exactly those with `value >= t`.
    pub t: f64,
    pub mask: BinaryMask,
    /// Set when the channel was constant and no meaningful cut exists.
    pub degenerate: bool,
}

/// Select the top `p` fraction of `channel` by value.
///
/// The cut `t` is the value of the `round(p * n)`-th largest pixel, so the
/// selected fraction is within `1/(2n)` of `p` plus whatever tie mass sits at
/// `t` (ties are included). A constant channel yields an empty mask and the
/// `degenerate` flag.
pub fn percentile_threshold(channel: &Raster, p: f64) -> Threshold {
    let (h, w) = channel.shape();
    let n = channel.data.len();
    let empty = |t: f64, degenerate| Threshold {
        t,
        mask: BinaryMask::empty(h, w),
        degenerate,
    };
    if n == 0 {
        return empty(f64::INFINITY, true);
    }
    let (lo, hi) = channel
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo < DEGENERATE_RANGE {
        return empty(f64::INFINITY, true);
    }
    let k = (p.clamp(0.0, 1.0) * n as f64).round() as usize;
    if k == 0 {
        return empty(f64::INFINITY, false);
    }
    let mut sorted = channel.data.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let t = sorted[k.min(n) - 1];
    let data = channel.data.iter().map(|&v| v >= t).collect();
    Threshold {
        t,
        mask: BinaryMask::new(h, w, data).expect("same shape"),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Raster {
        Raster::new(10, 10, (1..=100).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn ramp_top_twenty_percent() {
        // Oracle: sort all 100 values, the 20th largest is 81.
        let mut vals: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let oracle_t = vals[19];
        let th = percentile_threshold(&ramp(), 0.20);
        assert_eq!(th.t, oracle_t);
        assert_eq!(th.t, 81.0);
        assert_eq!(th.mask.count(), 20);
        assert!(!th.degenerate);
    }

    #[test]
    fn tiny_p_gives_empty_mask() {
        let th = percentile_threshold(&ramp(), 1e-6);
        assert!(th.mask.is_empty());
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let th = percentile_threshold(&Raster::filled(8, 8, 0.3), 0.25);
        assert!(th.degenerate);
        assert!(th.mask.is_empty());
    }

    #[test]
    fn ties_are_included() {
        let r = Raster::new(2, 4, vec![5.0, 5.0, 5.0, 5.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let th = percentile_threshold(&r, 0.25);
        assert_eq!(th.t, 5.0);
        assert_eq!(th.mask.count(), 4);
    }
}
