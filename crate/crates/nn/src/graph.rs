//! Tape-based reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] with a seed gradient for any node walks the tape in
//! reverse and returns gradients for graph inputs and parameters.

use crate::error::{NnError, Result};
use crate::kernels;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Sigmoid { x: NodeId },
    ClampUnit { x: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    GlobalAvgPool { x: NodeId },
    Upsample { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, s: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an external input. With `track` set, its gradient is reported.
    pub fn input(&mut self, value: Tensor, track: bool) -> NodeId {
        self.push(value, Op::Input, track)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id), true)
    }

    /// Same-size convolution; kernel size is taken from the weight shape
    /// `[cout, cin, k, k]` and bias has shape `[cout, 1, 1, 1]`.
    pub fn conv2d(&mut self, x: NodeId, weight: ParamId, bias: ParamId) -> Result<NodeId> {
        let w = self.param(weight);
        let b = self.param(bias);
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, cin, h, width] = xv.dims();
        let [cout, wcin, k, k2] = wv.dims();
        if wcin != cin || k != k2 || k % 2 == 0 {
            return Err(NnError::Shape(format!(
                "conv2d: input {:?} vs weight {:?}",
                xv.dims(),
                wv.dims()
            )));
        }
        let mut out = Tensor::zeros([n, cout, h, width]);
        kernels::conv2d_forward(
            xv.data(),
            n,
            cin,
            h,
            width,
            wv.data(),
            self.value(b).data(),
            cout,
            k,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Conv2d { x, w, b }, true))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    /// Clamp to `[0, 1]`; the gradient passes only where the input was in range.
    pub fn clamp_unit(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.clamp(0.0, 1.0));
        let ng = self.needs(x);
        self.push(out, Op::ClampUnit { x }, ng)
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims();
        let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0usize; out.len()];
        let mut o = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let sy = (2 * y + dy).min(h - 1);
                                let sx = (2 * xx + dx).min(w - 1);
                                let i = xv.index(b, ch, sy, sx);
                                if xv.data()[i] > best {
                                    best = xv.data()[i];
                                    best_i = i;
                                }
                            }
                        }
                        out.data_mut()[o] = best;
                        argmax[o] = best_i;
                        o += 1;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::MaxPool2 { x, argmax }, ng)
    }

    /// Mean over the spatial axes, producing `[n, c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims();
        let hw = (h * w) as f64;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for (o, plane) in out.data_mut().iter_mut().zip(xv.data().chunks(h * w)) {
            *o = plane.iter().sum::<f64>() / hw;
        }
        let ng = self.needs(x);
        self.push(out, Op::GlobalAvgPool { x }, ng)
    }

    /// Nearest-neighbour resize to `(h, w)`. From `1x1` this is a broadcast.
    pub fn upsample(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        let xv = self.value(x);
        let [n, c, sh, sw] = xv.dims();
        let mut out = Tensor::zeros([n, c, h, w]);
        let mut o = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let sy = y * sh / h;
                    for xx in 0..w {
                        let sx = xx * sw / w;
                        out.data_mut()[o] = xv.at(b, ch, sy, sx);
                        o += 1;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Upsample { x }, ng)
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let [n, ca, h, w] = av.dims();
        let [nb, cb, hb, wb] = bv.dims();
        if (n, h, w) != (nb, hb, wb) {
            return Err(NnError::Shape(format!(
                "concat: {:?} vs {:?}",
                av.dims(),
                bv.dims()
            )));
        }
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(av.sample(s));
            data.extend_from_slice(bv.sample(s));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(NnError::Shape(format!(
                "add: {:?} vs {:?}",
                av.dims(),
                bv.dims()
            )));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let out = self.value(x).scale(s);
        let ng = self.needs(x);
        self.push(out, Op::Scale { x, s }, ng)
    }

    /// Back-propagate `seed` (the gradient of some scalar with respect to
    /// `output`) through the tape.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.value(output).dims() != seed.dims() {
            return Err(NnError::Shape(format!(
                "seed {:?} for node {:?}",
                seed.dims(),
                self.value(output).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params = ParamGrads::new(self.params.len());
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            // Input gradients stay in place for the caller.
            if !node.needs_grad || matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input => unreachable!(),
                Op::Param(pid) => params.accumulate(*pid, &g),
                Op::Conv2d { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let [n, cin, h, width] = xv.dims();
                    let [cout, _, k, _] = wv.dims();
                    let mut dw = Tensor::zeros(wv.dims());
                    let mut db = Tensor::zeros(self.value(*b).dims());
                    let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.dims()));
                    kernels::conv2d_backward(
                        xv.data(),
                        n,
                        cin,
                        h,
                        width,
                        wv.data(),
                        cout,
                        k,
                        g.data(),
                        Some(dw.data_mut()),
                        Some(db.data_mut()),
                        dx.as_mut().map(|t| t.data_mut()),
                    );
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d *= slope;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ClampUnit { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if !(0.0..=1.0).contains(&v) {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).dims());
                    for (&i, &d) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[i] += d;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GlobalAvgPool { x } => {
                    let dims = self.value(*x).dims();
                    let hw = dims[2] * dims[3];
                    let mut dx = Tensor::zeros(dims);
                    for (plane, &d) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
                        plane.fill(d / hw as f64);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let [n, c, sh, sw] = self.value(*x).dims();
                    let [_, _, h, w] = g.dims();
                    let mut dx = Tensor::zeros([n, c, sh, sw]);
                    let mut o = 0;
                    for b in 0..n {
                        for ch in 0..c {
                            for y in 0..h {
                                let sy = y * sh / h;
                                for xx in 0..w {
                                    let sx = xx * sw / w;
                                    let i = dx.index(b, ch, sy, sx);
                                    dx.data_mut()[i] += g.data()[o];
                                    o += 1;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat { a, b } => {
                    let da_dims = self.value(*a).dims();
                    let db_dims = self.value(*b).dims();
                    let la = da_dims[1] * da_dims[2] * da_dims[3];
                    let lb = db_dims[1] * db_dims[2] * db_dims[3];
                    let mut da = Tensor::zeros(da_dims);
                    let mut db = Tensor::zeros(db_dims);
                    for s in 0..da_dims[0] {
                        let gs = g.sample(s);
                        da.sample_mut(s).copy_from_slice(&gs[..la]);
                        db.sample_mut(s).copy_from_slice(&gs[la..la + lb]);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Scale { x, s } => accumulate(&mut grads, *x, g.scale(*s)),
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
