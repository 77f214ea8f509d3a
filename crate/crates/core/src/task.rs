//! Task networks trained on synthetic data: a U-shaped nucleus segmenter and
//! a small patch classifier.

use histosynth_nn::{Graph, NodeId, ParamGrads, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{bce_loss, ce_loss, softmax};
use crate::imageops::{BinaryMask, Raster, RgbImage};
use crate::nets::{images_to_tensor, ArchDescriptor, Conv, LayerKind, NetBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Segmentation,
    Classification { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub width: usize,
    pub wide: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Segmentation,
            width: 32,
            wide: 64,
            kernel: 3,
            seed: 3,
        }
    }
}

/// Training target matching [`TaskConfig::task`].
#[derive(Debug, Clone, PartialEq)]
pub enum TaskTarget {
    /// `[n, 1, h, w]` batch of 0/1 values.
    Masks(Tensor),
    Labels(Vec<usize>),
}

/// Result of one forward/backward evaluation.
#[derive(Debug, Clone)]
pub struct TaskEval {
    pub loss: f64,
    pub params: ParamGrads,
    /// Gradient of the loss with respect to the input images, when requested.
    pub input_grad: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TaskModel {
    pub config: TaskConfig,
    pub params: ParamStore,
    pub arch: ArchDescriptor,
    convs: Vec<Conv>,
}

impl TaskModel {
    pub fn new(config: TaskConfig) -> Self {
        let (w, wd, k) = (config.width, config.wide, config.kernel);
        let mut b = NetBuilder::new(config.seed);
        let mut convs = Vec::new();
        match config.task {
            TaskKind::Segmentation => {
                convs.push(b.conv("enc1.conv1", 3, w, k));
                convs.push(b.conv("enc1.conv2", w, w, k));
                b.note("enc1.pool", LayerKind::MaxPool);
                convs.push(b.conv("enc2.conv1", w, wd, k));
                convs.push(b.conv("enc2.conv2", wd, wd, k));
                b.note("enc2.pool", LayerKind::MaxPool);
                for i in 1..=4 {
                    convs.push(b.conv(&format!("bottleneck.conv{i}"), wd, wd, k));
                }
                b.note("dec2.up", LayerKind::Upsample);
                b.note("dec2.skip", LayerKind::Skip { channels: wd });
                convs.push(b.conv("dec2.conv1", 2 * wd, wd, k));
                convs.push(b.conv("dec2.conv2", wd, wd, k));
                convs.push(b.conv("dec2.conv3", wd, wd, k));
                b.note("dec1.up", LayerKind::Upsample);
                b.note("dec1.skip", LayerKind::Skip { channels: w });
                convs.push(b.conv("dec1.conv1", wd + w, w, k));
                convs.push(b.conv("dec1.conv2", w, w, k));
                convs.push(b.conv("dec1.conv3", w, w, k));
                convs.push(b.conv("dec1.head", w, 1, 1));
            }
            TaskKind::Classification { classes } => {
                convs.push(b.conv("block1.conv1", 3, w, k));
                convs.push(b.conv("block1.conv2", w, w, k));
                b.note("block1.pool", LayerKind::MaxPool);
                convs.push(b.conv("block2.conv1", w, wd, k));
                for i in 2..=4 {
                    convs.push(b.conv(&format!("block2.conv{i}"), wd, wd, k));
                }
                b.note("block2.pool", LayerKind::MaxPool);
                for i in 1..=4 {
                    convs.push(b.conv(&format!("block3.conv{i}"), wd, wd, k));
                }
                convs.push(b.conv("head", wd, classes, 1));
                b.note("head.gap", LayerKind::GlobalAvgPool);
            }
        }
        Self {
            config,
            params: b.params,
            arch: b.arch,
            convs,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self.config.task {
            TaskKind::Segmentation => None,
            TaskKind::Classification { classes } => Some(classes),
        }
    }

    /// Record the forward pass. Segmentation yields a `[n, 1, h, w]`
    /// probability map; classification yields `[n, k, 1, 1]` logits.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let c = &self.convs;
        match self.config.task {
            TaskKind::Segmentation => {
                let [_, _, h, w] = g.value(x).dims();
                let e1 = c[0].apply_act(g, x)?;
                let e1 = c[1].apply_act(g, e1)?;
                let p1 = g.max_pool2(e1);
                let e2 = c[2].apply_act(g, p1)?;
                let e2 = c[3].apply_act(g, e2)?;
                let [_, _, h2, w2] = g.value(e2).dims();
                let mut y = g.max_pool2(e2);
                for conv in &c[4..8] {
                    y = conv.apply_act(g, y)?;
                }
                let u2 = g.upsample(y, h2, w2);
                y = g.concat(u2, e2)?;
                for conv in &c[8..11] {
                    y = conv.apply_act(g, y)?;
                }
                let u1 = g.upsample(y, h, w);
                y = g.concat(u1, e1)?;
                for conv in &c[11..14] {
                    y = conv.apply_act(g, y)?;
                }
                let logits = c[14].apply(g, y)?;
                Ok(g.sigmoid(logits))
            }
            TaskKind::Classification { .. } => {
                let mut y = x;
                for (i, conv) in c[..10].iter().enumerate() {
                    y = conv.apply_act(g, y)?;
                    if i == 1 || i == 5 {
                        y = g.max_pool2(y);
                    }
                }
                let logits = c[10].apply(g, y)?;
                Ok(g.global_avg_pool(logits))
            }
        }
    }

    /// Loss of the recorded output `out` and its gradient with respect to it.
    pub fn loss_seed(
        &self,
        g: &Graph<'_>,
        out: NodeId,
        target: &TaskTarget,
    ) -> Result<(f64, Tensor)> {
        let v = g.value(out);
        match (&self.config.task, target) {
            (TaskKind::Segmentation, TaskTarget::Masks(m)) => {
                if m.dims() != v.dims() {
                    return Err(Error::Shape(format!(
                        "prediction {:?} vs mask {:?}",
                        v.dims(),
                        m.dims()
                    )));
                }
                let (loss, grad) = bce_loss(v.data(), m.data())?;
                Ok((loss, Tensor::from_vec(v.dims(), grad)?))
            }
            (TaskKind::Classification { classes }, TaskTarget::Labels(labels)) => {
                let k = *classes;
                let probs: Vec<f64> = v.data().chunks(k).flat_map(softmax).collect();
                let (loss, gp) = ce_loss(&probs, k, labels)?;
                // back through the softmax Jacobian
                let mut gl = vec![0.0; probs.len()];
                for row in 0..labels.len() {
                    let p = &probs[row * k..(row + 1) * k];
                    let gr = &gp[row * k..(row + 1) * k];
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        gl[row * k + j] = p[j] * (gr[j] - dot);
                    }
                }
                Ok((loss, Tensor::from_vec(v.dims(), gl)?))
            }
            _ => Err(Error::Invalid("target kind does not match the task".into())),
        }
    }

    /// Loss and gradients for a batch.
    pub fn evaluate(&self, x: &Tensor, target: &TaskTarget, input_grad: bool) -> Result<TaskEval> {
        let mut g = Graph::new(&self.params);
        let xin = g.input(x.clone(), input_grad);
        let out = self.forward(&mut g, xin)?;
        let (loss, seed) = self.loss_seed(&g, out, target)?;
        let grads = g.backward(out, &seed)?;
        let input_grad = if input_grad {
            Some(
                grads
                    .node(xin)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(x.dims())),
            )
        } else {
            None
        };
        Ok(TaskEval {
            loss,
            params: grads.into_params(),
            input_grad,
        })
    }

    pub fn loss(&self, x: &Tensor, target: &TaskTarget) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let xin = g.input(x.clone(), false);
        let out = self.forward(&mut g, xin)?;
        Ok(self.loss_seed(&g, out, target)?.0)
    }

    /// Probability maps (segmentation) or class-probability rows
    /// (classification) for a batch.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let xin = g.input(x.clone(), false);
        let out = self.forward(&mut g, xin)?;
        let v = g.value(out);
        Ok(match self.config.task {
            TaskKind::Segmentation => (0..v.n()).map(|i| v.sample(i).to_vec()).collect(),
            TaskKind::Classification { classes } => v.data().chunks(classes).map(softmax).collect(),
        })
    }

    pub fn segment(&self, img: &RgbImage) -> Result<Raster> {
        if self.classes().is_some() {
            return Err(Error::Invalid("classification model cannot segment".into()));
        }
        let (h, w) = img.shape();
        let map = self.predict(&images_to_tensor(&[img])?)?.remove(0);
        Raster::new(h, w, map)
    }

    pub fn segment_mask(&self, img: &RgbImage) -> Result<BinaryMask> {
        Ok(BinaryMask::from_raster(&self.segment(img)?, 0.5))
    }
}
