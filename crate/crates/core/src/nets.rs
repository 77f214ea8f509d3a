//! Shared plumbing for the convolutional models: layer descriptors, a
//! parameter builder, and conversions between images and batch tensors.

use histosynth_nn::{init, Graph, NodeId, ParamId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{BinaryMask, RgbImage};

/// Negative slope of the leaky rectifier used after every hidden conv.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        cin: usize,
        cout: usize,
        k: usize,
    },
    MaxPool,
    GlobalAvgPool,
    /// Broadcast of a feature vector concatenated as extra channels.
    Inject {
        channels: usize,
    },
    Upsample,
    Skip {
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Ordered layer list of one network.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub layers: Vec<LayerDesc>,
}

impl ArchDescriptor {
    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .count()
    }

    pub fn pool_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::MaxPool))
            .count()
    }

    /// Layers whose name starts with `prefix`.
    pub fn branch(&self, prefix: &str) -> ArchDescriptor {
        ArchDescriptor {
            layers: self
                .layers
                .iter()
                .filter(|l| l.name.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }
}

/// One convolution's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        Ok(g.conv2d(x, self.weight, self.bias)?)
    }

    /// Convolution followed by the leaky rectifier.
    pub fn apply_act(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let y = self.apply(g, x)?;
        Ok(g.leaky_relu(y, LEAKY_SLOPE))
    }
}

/// Collects parameters and the matching descriptor while a model is built.
pub struct NetBuilder {
    pub params: ParamStore,
    pub arch: ArchDescriptor,
    rng: ChaCha8Rng,
}

impl NetBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            params: ParamStore::new(),
            arch: ArchDescriptor::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        self.conv_with_gain(name, cin, cout, k, 1.0)
    }

    pub fn conv_with_gain(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
    ) -> Conv {
        let w = init::conv_weight(&mut self.rng, cout, cin, k, gain);
        let weight = self.params.add(format!("{name}.weight"), w);
        let bias = self.params.add(format!("{name}.bias"), init::bias(cout));
        self.note(name, LayerKind::Conv { cin, cout, k });
        Conv { weight, bias }
    }

    pub fn note(&mut self, name: &str, kind: LayerKind) {
        self.arch.layers.push(LayerDesc {
            name: name.to_string(),
            kind,
        });
    }
}

/// Stack images into an `[n, 3, h, w]` batch.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("empty image batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                (h, w),
                img.shape()
            )));
        }
        data.extend(img.to_planar());
    }
    Ok(Tensor::from_vec([images.len(), 3, h, w], data)?)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<RgbImage>> {
    let [n, c, h, w] = t.dims();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    (0..n)
        .map(|i| RgbImage::from_planar(h, w, t.sample(i)))
        .collect()
}

/// Stack masks into an `[n, 1, h, w]` batch of 0/1 values.
pub fn masks_to_tensor(masks: &[&BinaryMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("empty mask batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.shape() != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                (h, w),
                m.shape()
            )));
        }
        data.extend(m.data().iter().map(|&v| if v { 1.0 } else { 0.0 }));
    }
    Ok(Tensor::from_vec([masks.len(), 1, h, w], data)?)
}

/// Check that two batches agree on everything but channel count.
pub fn same_batch_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    let ([na, _, ha, wa], [nb, _, hb, wb]) = (a.dims(), b.dims());
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "batch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}
