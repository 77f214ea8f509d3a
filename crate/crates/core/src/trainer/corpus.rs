use std::collections::BTreeMap;

use histosynth_nn::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::{BinaryMask, RgbImage};
use crate::nets::{images_to_tensor, masks_to_tensor};
use crate::synth::{RealPatch, SynthSample};
use crate::task::{TaskKind, TaskTarget};

/// One initial synthetic patch used as refiner input.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub style_id: String,
    /// Class label, used only by classification task networks.
    pub label: Option<usize>,
}

impl From<&SynthSample> for TrainSample {
    fn from(s: &SynthSample) -> Self {
        Self {
            image: s.image.clone(),
            mask: s.gt_mask.clone(),
            style_id: s.style_id.clone(),
            label: None,
        }
    }
}

/// Synthetic inputs plus the real patches grouped by style.
#[derive(Debug, Clone)]
pub struct TrainCorpus {
    samples: Vec<TrainSample>,
    groups: BTreeMap<String, Vec<RgbImage>>,
    patch_size: usize,
}

impl TrainCorpus {
    pub fn new(samples: Vec<TrainSample>, real: &[RealPatch]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyCorpus)?;
        let (h, w) = first.image.shape();
        if h != w {
            return Err(Error::Shape(format!(
                "training patches must be square, got {h}x{w}"
            )));
        }
        let patch_size = h;
        let mut groups: BTreeMap<String, Vec<RgbImage>> = BTreeMap::new();
        for p in real {
            let (ph, pw) = p.image.shape();
            if ph < patch_size || pw < patch_size {
                return Err(Error::Shape(format!(
                    "real patch {} ({ph}x{pw}) is smaller than the training patch size {patch_size}",
                    p.id
                )));
            }
            groups
                .entry(p.style_id.clone())
                .or_default()
                .push(p.image.clone());
        }
        for s in &samples {
            if s.image.shape() != (patch_size, patch_size)
                || s.mask.shape() != (patch_size, patch_size)
            {
                return Err(Error::Shape(
                    "all training samples must share one size".into(),
                ));
            }
            match groups.get(&s.style_id) {
                Some(g) if g.len() >= 2 => {}
                _ => return Err(Error::GroupTooSmall(s.style_id.clone())),
            }
        }
        Ok(Self {
            samples,
            groups,
            patch_size,
        })
    }

    pub fn from_synth(samples: &[SynthSample], real: &[RealPatch]) -> Result<Self> {
        Self::new(samples.iter().map(TrainSample::from).collect(), real)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn samples(&self) -> &[TrainSample] {
        &self.samples
    }

    pub fn styles(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, style: &str) -> Option<&[RgbImage]> {
        self.groups.get(style).map(Vec::as_slice)
    }
}

/// Epoch-shuffled pass over sample indices.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sampler {
    pub order: Vec<usize>,
    pub pos: usize,
}

impl Sampler {
    pub fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> usize {
        if self.order.len() != n || self.pos >= self.order.len() {
            self.order = (0..n).collect();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Tensors for one training step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Initial synthetic images.
    pub input: Tensor,
    /// A real patch from each input's style group.
    pub reference: Tensor,
    /// A second, different real patch from the same group.
    pub real: Tensor,
    pub target: TaskTarget,
}

fn random_crop(img: &RgbImage, size: usize, rng: &mut ChaCha8Rng) -> Result<RgbImage> {
    let (h, w) = img.shape();
    if (h, w) == (size, size) {
        return Ok(img.clone());
    }
    let oy = rng.random_range(0..=h - size);
    let ox = rng.random_range(0..=w - size);
    RgbImage::from_fn(size, size, |y, x| img.pixel(y + oy, x + ox))
}

pub(crate) fn draw_batch(
    corpus: &TrainCorpus,
    task: TaskKind,
    batch_size: usize,
    sampler: &mut Sampler,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let size = corpus.patch_size;
    let mut inputs = Vec::with_capacity(batch_size);
    let mut refs = Vec::with_capacity(batch_size);
    let mut reals = Vec::with_capacity(batch_size);
    let mut masks = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let s = &corpus.samples[sampler.next(corpus.len(), rng)];
        let group = &corpus.groups[&s.style_id];
        let a = rng.random_range(0..group.len());
        let mut b = rng.random_range(0..group.len() - 1);
        if b >= a {
            b += 1;
        }
        refs.push(random_crop(&group[a], size, rng)?);
        reals.push(random_crop(&group[b], size, rng)?);
        inputs.push(&s.image);
        masks.push(&s.mask);
        if let TaskKind::Classification { classes } = task {
            let label = s.label.ok_or_else(|| {
                Error::Invalid("classification training needs labelled samples".into())
            })?;
            if label >= classes {
                return Err(Error::Invalid(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
            labels.push(label);
        }
    }
    let target = match task {
        TaskKind::Segmentation => TaskTarget::Masks(masks_to_tensor(&masks)?),
        TaskKind::Classification { .. } => TaskTarget::Labels(labels),
    };
    Ok(Batch {
        input: images_to_tensor(&inputs)?,
        reference: images_to_tensor(&refs.iter().collect::<Vec<_>>())?,
        real: images_to_tensor(&reals.iter().collect::<Vec<_>>())?,
        target,
    })
}
