use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FieldError, Result};
use crate::imageops::StainMatrix;

/// One range of the mean-H statistic: applies to `h < upper` (and `h >=` the
/// previous bucket's upper bound). The last bucket has no upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub p: f64,
}

/// Piecewise-constant map from mean hematoxylin level to the fraction of
/// pixels treated as nuclear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub buckets: Vec<Bucket>,
}

impl PercentileTable {
    fn from_ps(ps: [f64; 5]) -> Self {
        let uppers = [Some(-1.25), Some(-1.20), Some(-1.15), Some(-1.10), None];
        Self {
            buckets: uppers
                .into_iter()
                .zip(ps)
                .map(|(upper, p)| Bucket { upper, p })
                .collect(),
        }
    }

    /// Over-inclusive table used to find everything that could be a nucleus.
    pub fn super_segmentation() -> Self {
        Self::from_ps([0.15, 0.20, 0.25, 0.30, 0.35])
    }

    /// Under-inclusive table used to sample pure nuclear colour.
    pub fn sub_segmentation() -> Self {
        Self::from_ps([0.10, 0.16, 0.21, 0.27, 0.32])
    }

    pub fn lookup(&self, h_mean: f64) -> f64 {
        choose_percentile(h_mean, self)
    }

    fn validate(&self, field: &str, errors: &mut Vec<FieldError>) {
        if self.buckets.is_empty() {
            errors.push(FieldError::new(field, "table has no buckets"));
            return;
        }
        let last = self.buckets.len() - 1;
        let mut prev = f64::NEG_INFINITY;
        for (i, b) in self.buckets.iter().enumerate() {
            if !(b.p > 0.0 && b.p < 1.0) {
                errors.push(FieldError::new(
                    format!("{field}[{i}].p"),
                    format!("{} must be strictly between 0 and 1", b.p),
                ));
            }
            match (i == last, b.upper) {
                (true, Some(_)) => errors.push(FieldError::new(
                    format!("{field}[{i}].upper"),
                    "last bucket must be unbounded",
                )),
                (false, None) => errors.push(FieldError::new(
                    format!("{field}[{i}].upper"),
                    "only the last bucket may be unbounded",
                )),
                (false, Some(u)) if !(u > prev) || !u.is_finite() => errors.push(FieldError::new(
                    format!("{field}[{i}].upper"),
                    "bounds must be finite and strictly increasing",
                )),
                (false, Some(u)) => prev = u,
                (true, None) => {}
            }
        }
    }
}

/// The `p` of the unique bucket whose half-open range contains `h_mean`.
pub fn choose_percentile(h_mean: f64, table: &PercentileTable) -> f64 {
    table
        .buckets
        .iter()
        .find(|b| b.upper.is_none_or(|u| h_mean < u))
        .or(table.buckets.last())
        .map(|b| b.p)
        .expect("validated tables are non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "20X")]
    X20,
    #[serde(rename = "40X")]
    X40,
}

impl Magnification {
    /// Linear pixel scale relative to 40X.
    pub fn scale(self) -> f64 {
        match self {
            Magnification::X20 => 0.5,
            Magnification::X40 => 1.0,
        }
    }
}

/// Every knob of initial synthesis.
///
/// Cellularity is measured in nuclei per 10,000 px² of patch area. The
/// smoothing sigma and minimum region area are given at 40X and scaled by
/// [`Magnification::scale`] (area by its square).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    pub super_p_table: PercentileTable,
    pub sub_p_table: PercentileTable,
    pub cellularity: f64,
    pub pleomorphism: f64,
    pub radius_range: (f64, f64),
    pub clearing_prob: f64,
    pub boundary_blur_sigma: f64,
    pub quad_distort_strength: f64,
    pub magnification: Magnification,
    pub patch_size: usize,
    pub rng_seed: u64,
    pub smooth_sigma: f64,
    pub min_region_area: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stain_matrix: Option<StainMatrix>,
}

/// Area unit for [`SynthesisParams::cellularity`].
pub const CELLULARITY_AREA: f64 = 10_000.0;

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            super_p_table: PercentileTable::super_segmentation(),
            sub_p_table: PercentileTable::sub_segmentation(),
            cellularity: 15.0,
            pleomorphism: 0.3,
            radius_range: (4.0, 8.0),
            clearing_prob: 0.2,
            boundary_blur_sigma: 1.0,
            quad_distort_strength: 0.3,
            magnification: Magnification::X40,
            patch_size: 75,
            rng_seed: 0,
            smooth_sigma: 1.0,
            min_region_area: 9,
            stain_matrix: None,
        }
    }
}

impl SynthesisParams {
    pub fn stains(&self) -> StainMatrix {
        self.stain_matrix.unwrap_or_default()
    }

    pub fn scaled_smooth_sigma(&self) -> f64 {
        self.smooth_sigma * self.magnification.scale()
    }

    pub fn scaled_min_area(&self) -> usize {
        let s = self.magnification.scale();
        (self.min_region_area as f64 * s * s).round() as usize
    }

    /// Expected nucleus count for a square patch of side `patch_size`.
    pub fn expected_count(&self, patch_size: usize) -> f64 {
        self.cellularity * (patch_size * patch_size) as f64 / CELLULARITY_AREA
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    /// Field-level validation of every invariant.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.super_p_table.validate("super_p_table", &mut errors);
        self.sub_p_table.validate("sub_p_table", &mut errors);
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errors.push(FieldError::new(field, msg));
            }
        };
        check(
            self.cellularity.is_finite() && self.cellularity >= 0.0,
            "cellularity",
            "must be finite and >= 0",
        );
        check(
            (0.0..=1.0).contains(&self.pleomorphism),
            "pleomorphism",
            "must be in [0,1]",
        );
        let (rmin, rmax) = self.radius_range;
        check(
            rmin.is_finite() && rmax.is_finite() && rmin > 0.0 && rmin < rmax,
            "radius_range",
            "need 0 < min < max",
        );
        check(
            (0.0..=1.0).contains(&self.clearing_prob),
            "clearing_prob",
            "must be in [0,1]",
        );
        check(
            self.boundary_blur_sigma.is_finite() && self.boundary_blur_sigma >= 0.0,
            "boundary_blur_sigma",
            "must be >= 0",
        );
        check(
            (0.0..=1.0).contains(&self.quad_distort_strength),
            "quad_distort_strength",
            "must be in [0,1]",
        );
        check(
            (crate::imageops::MIN_SIDE..=4096).contains(&self.patch_size),
            "patch_size",
            "must be between 8 and 4096",
        );
        check(
            self.smooth_sigma.is_finite() && self.smooth_sigma >= 0.0,
            "smooth_sigma",
            "must be >= 0",
        );
        if let Some(m) = self.stain_matrix {
            check(
                StainMatrix::new(m.rows).is_ok(),
                "stain_matrix",
                "must be invertible",
            );
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(errors))
        }
    }

    /// Stable short digest of the parameter set, recorded in manifests.
    pub fn params_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("params serialize");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }
}
