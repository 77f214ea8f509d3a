use histosynth_nn::{Graph, NodeId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nets::{same_batch_shape, ArchDescriptor, Conv, LayerKind, NetBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub width: usize,
    pub wide: usize,
    pub kernel: usize,
    /// When unset the reference features are replaced by zeros, leaving the
    /// network blind to the reference patch.
    pub use_reference: bool,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            width: 32,
            wide: 64,
            kernel: 3,
            use_reference: true,
            seed: 2,
        }
    }
}

/// Scores whether a candidate and a reference are real patches of one style.
#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    pub arch: ArchDescriptor,
    reference: Vec<Conv>,
    front: Vec<Conv>,
    trunk: Vec<Conv>,
    head: Conv,
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig) -> Self {
        let (w, wd, k) = (config.width, config.wide, config.kernel);
        let mut b = NetBuilder::new(config.seed);
        let mut reference = vec![
            b.conv("reference.conv1", 3, w, k),
            b.conv("reference.conv2", w, w, k),
        ];
        b.note("reference.pool1", LayerKind::MaxPool);
        reference.push(b.conv("reference.conv3", w, wd, k));
        reference.push(b.conv("reference.conv4", wd, wd, k));
        b.note("reference.gap", LayerKind::GlobalAvgPool);

        let front = vec![
            b.conv("trunk.conv1", 3, w, k),
            b.conv("trunk.conv2", w, w, k),
        ];
        b.note("trunk.inject", LayerKind::Inject { channels: wd });
        let mut trunk = vec![
            b.conv("trunk.conv3", w + wd, w, k),
            b.conv("trunk.conv4", w, w, k),
        ];
        b.note("trunk.pool1", LayerKind::MaxPool);
        trunk.push(b.conv("trunk.conv5", w, wd, k));
        trunk.push(b.conv("trunk.conv6", wd, wd, k));
        trunk.push(b.conv("trunk.conv7", wd, wd, k));
        b.note("trunk.pool2", LayerKind::MaxPool);
        for i in 8..=10 {
            trunk.push(b.conv(&format!("trunk.conv{i}"), wd, wd, k));
        }
        let head = b.conv("trunk.score", wd, 1, 1);
        b.note("trunk.gap", LayerKind::GlobalAvgPool);
        Self {
            config,
            params: b.params,
            arch: b.arch,
            reference,
            front,
            trunk,
            head,
        }
    }

    /// Record the forward pass; the result is a `[n, 1, 1, 1]` probability.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        candidate: NodeId,
        reference: NodeId,
    ) -> Result<NodeId> {
        let n = g.value(candidate).n();
        let rv = if self.config.use_reference {
            let mut t = reference;
            for (i, conv) in self.reference.iter().enumerate() {
                t = conv.apply_act(g, t)?;
                if i == 1 {
                    t = g.max_pool2(t);
                }
            }
            g.global_avg_pool(t)
        } else {
            g.input(Tensor::zeros([n, self.config.wide, 1, 1]), false)
        };
        let [_, _, h, w] = g.value(candidate).dims();
        let mut x = candidate;
        for conv in &self.front {
            x = conv.apply_act(g, x)?;
        }
        let broadcast = g.upsample(rv, h, w);
        x = g.concat(x, broadcast)?;
        for (i, conv) in self.trunk.iter().enumerate() {
            x = conv.apply_act(g, x)?;
            if i == 1 || i == 4 {
                x = g.max_pool2(x);
            }
        }
        let score = self.head.apply(g, x)?;
        let pooled = g.global_avg_pool(score);
        Ok(g.sigmoid(pooled))
    }

    /// Probabilities for a batch of (candidate, reference) pairs.
    pub fn score(&self, candidate: &Tensor, reference: &Tensor) -> Result<Vec<f64>> {
        same_batch_shape(candidate, reference)?;
        let mut g = Graph::new(&self.params);
        let c = g.input(candidate.clone(), false);
        let r = g.input(reference.clone(), false);
        let out = self.forward(&mut g, c, r)?;
        Ok(g.value(out).data().to_vec())
    }
}
