use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{label_components, BinaryMask, Raster, RgbImage};
use crate::store::StoredSample;
use crate::synth::SynthSample;
use crate::task::TaskModel;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub pixel_dice: f64,
    pub object_dice: f64,
    /// Mean of the two.
    pub dice_avg: f64,
}

impl DiceReport {
    pub fn new(pixel_dice: f64, object_dice: f64) -> Self {
        Self {
            pixel_dice,
            object_dice,
            dice_avg: (pixel_dice + object_dice) / 2.0,
        }
    }
}

fn check_shapes(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)`, with two empty masks scoring 1.
pub fn pixel_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    })
}

/// Object-level DICE: each ground-truth component is paired with the
/// predicted component it overlaps most, scored by the DICE of that pair
/// (0 when nothing overlaps), and the scores are averaged weighted by
/// ground-truth component area. Two empty masks score 1; an empty ground
/// truth with any prediction scores 0.
pub fn object_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (gl, gn) = label_components(gt);
    let (pl, pn) = label_components(pred);
    if gn == 0 {
        return Ok(if pn == 0 { 1.0 } else { 0.0 });
    }
    let mut p_area = vec![0usize; pn + 1];
    for &l in &pl {
        p_area[l as usize] += 1;
    }
    let mut g_area = vec![0usize; gn + 1];
    // overlap[g][p], sparse via per-object maps
    let mut overlap: Vec<std::collections::BTreeMap<u32, usize>> = vec![Default::default(); gn + 1];
    for (&g, &p) in gl.iter().zip(&pl) {
        if g == 0 {
            continue;
        }
        g_area[g as usize] += 1;
        if p != 0 {
            *overlap[g as usize].entry(p).or_insert(0) += 1;
        }
    }
    let mut weighted = 0.0;
    let mut total = 0usize;
    for g in 1..=gn {
        let best = overlap[g]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&p, &inter)| 2.0 * inter as f64 / (g_area[g] + p_area[p as usize]) as f64)
            .unwrap_or(0.0);
        weighted += g_area[g] as f64 * best;
        total += g_area[g];
    }
    Ok(weighted / total as f64)
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<DiceReport> {
    Ok(DiceReport::new(
        pixel_dice(pred, gt)?,
        object_dice(pred, gt)?,
    ))
}

/// Anything that maps an image to a per-pixel nucleus probability.
pub trait Segmenter {
    fn probability_map(&self, image: &RgbImage) -> Result<Raster>;
}

impl Segmenter for TaskModel {
    fn probability_map(&self, image: &RgbImage) -> Result<Raster> {
        self.segment(image)
    }
}

/// One evaluation image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub image: RgbImage,
    pub gt: BinaryMask,
}

impl EvalItem {
    pub fn from_synth(id: impl Into<String>, s: &SynthSample) -> Self {
        Self {
            id: id.into(),
            image: s.image.clone(),
            gt: s.gt_mask.clone(),
        }
    }
}

impl From<StoredSample> for EvalItem {
    fn from(s: StoredSample) -> Self {
        Self {
            id: s.record.id,
            image: s.image,
            gt: s.gt_mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDice {
    pub id: String,
    #[serde(flatten)]
    pub report: DiceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDice {
    /// Per-column means over images.
    pub mean: DiceReport,
    pub per_image: Vec<ImageDice>,
}

impl AggregateDice {
    pub fn from_images(per_image: Vec<ImageDice>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = per_image.len() as f64;
        let pixel = per_image.iter().map(|r| r.report.pixel_dice).sum::<f64>() / n;
        let object = per_image.iter().map(|r| r.report.object_dice).sum::<f64>() / n;
        Ok(Self {
            mean: DiceReport::new(pixel, object),
            per_image,
        })
    }
}

/// Segment every item, binarize at `threshold` and score against ground truth.
pub fn evaluate_model<S: Segmenter + ?Sized>(
    model: &S,
    corpus: &[EvalItem],
    threshold: f64,
) -> Result<AggregateDice> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per_image = corpus
        .iter()
        .map(|item| {
            let map = model.probability_map(&item.image)?;
            let pred = BinaryMask::from_raster(&map, threshold);
            Ok(ImageDice {
                id: item.id.clone(),
                report: dice(&pred, &item.gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AggregateDice::from_images(per_image)
}
