use histosynth_nn::{Graph, NodeId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imageops::RgbImage;
use crate::nets::{
    images_to_tensor, same_batch_shape, tensor_to_images, ArchDescriptor, Conv, LayerKind,
    NetBuilder,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Channels of the full-resolution layers.
    pub width: usize,
    /// Channels of the texture features.
    pub wide: usize,
    pub kernel: usize,
    /// Init gain of the residual output layer; 0 makes the refiner the identity.
    pub residual_init: f64,
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            width: 32,
            wide: 64,
            kernel: 3,
            residual_init: 0.0,
            seed: 1,
        }
    }
}

/// Number of refinement-branch convs between the texture injection and the
/// residual head.
const POST_INJECT: usize = 12;

/// Style-conditioned residual refiner.
///
/// A texture branch reduces the reference patch to a feature vector by
/// global average pooling; the vector is broadcast and concatenated after
/// the second refinement conv. Output is `clamp(I + residual)`.
#[derive(Debug, Clone)]
pub struct RefinerModel {
    pub config: RefinerConfig,
    pub params: ParamStore,
    pub arch: ArchDescriptor,
    texture: Vec<Conv>,
    pre: Vec<Conv>,
    post: Vec<Conv>,
    head: Conv,
}

impl RefinerModel {
    pub fn new(config: RefinerConfig) -> Self {
        let (w, wd, k) = (config.width, config.wide, config.kernel);
        let mut b = NetBuilder::new(config.seed);
        let mut texture = Vec::new();
        texture.push(b.conv("texture.conv1", 3, w, k));
        texture.push(b.conv("texture.conv2", w, w, k));
        b.note("texture.pool1", LayerKind::MaxPool);
        texture.push(b.conv("texture.conv3", w, wd, k));
        texture.push(b.conv("texture.conv4", wd, wd, k));
        b.note("texture.pool2", LayerKind::MaxPool);
        texture.push(b.conv("texture.conv5", wd, wd, k));
        texture.push(b.conv("texture.conv6", wd, wd, k));
        b.note("texture.gap", LayerKind::GlobalAvgPool);

        let pre = vec![
            b.conv("refine.conv1", 3, w, k),
            b.conv("refine.conv2", w, w, k),
        ];
        b.note("refine.inject", LayerKind::Inject { channels: wd });
        let mut post = Vec::with_capacity(POST_INJECT);
        post.push(b.conv("refine.conv3", w + wd, w, k));
        for i in 4..3 + POST_INJECT {
            post.push(b.conv(&format!("refine.conv{i}"), w, w, k));
        }
        let head = b.conv_with_gain("refine.residual", w, 3, k, config.residual_init);
        Self {
            config,
            params: b.params,
            arch: b.arch,
            texture,
            pre,
            post,
            head,
        }
    }

    /// Record the forward pass on `g`, which must be built over `self.params`.
    pub fn forward(&self, g: &mut Graph<'_>, input: NodeId, reference: NodeId) -> Result<NodeId> {
        let mut t = reference;
        for (i, conv) in self.texture.iter().enumerate() {
            t = conv.apply_act(g, t)?;
            if i == 1 || i == 3 {
                t = g.max_pool2(t);
            }
        }
        let tv = g.global_avg_pool(t);

        let [_, _, h, w] = g.value(input).dims();
        let mut r = input;
        for conv in &self.pre {
            r = conv.apply_act(g, r)?;
        }
        let broadcast = g.upsample(tv, h, w);
        r = g.concat(r, broadcast)?;
        for conv in &self.post {
            r = conv.apply_act(g, r)?;
        }
        let residual = self.head.apply(g, r)?;
        let sum = g.add(input, residual)?;
        Ok(g.clamp_unit(sum))
    }

    pub fn refine_batch(&self, input: &Tensor, reference: &Tensor) -> Result<Tensor> {
        same_batch_shape(input, reference)?;
        let mut g = Graph::new(&self.params);
        let i = g.input(input.clone(), false);
        let s = g.input(reference.clone(), false);
        let out = self.forward(&mut g, i, s)?;
        Ok(g.value(out).clone())
    }

    pub fn refine(&self, input: &RgbImage, reference: &RgbImage) -> Result<RgbImage> {
        let out = self.refine_batch(
            &images_to_tensor(&[input])?,
            &images_to_tensor(&[reference])?,
        )?;
        Ok(tensor_to_images(&out)?.remove(0))
    }
}
