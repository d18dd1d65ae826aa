use rayon::prelude::*;

use super::ops::{self, col2im, conv_geometry, gemm, im2col, linear_dims, LOG_CLAMP};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape(Var),
    Add(Var, Var),
    PixelShuffle {
        input: Var,
        r: usize,
    },
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        target: Tensor,
    },
    MaskedL1 {
        pred: Var,
        target: Tensor,
        include: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records forward operations so gradients can be computed in one reverse sweep.
///
/// A tape is used for exactly one forward/backward pass. Parameters enter as
/// leaves; after [`Tape::backward`] their gradients sit in the leaf tensors and
/// can be moved out with [`Tape::take`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp_warnings: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a recorded tensor (with any accumulated gradient) out of the tape.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    /// Number of cross-entropy entries whose probability hit the log clamp.
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        out.ensure_finite("conv2d")?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let needs = self.needs(input);
        self.push(out, Op::Relu(input), needs)
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2_with_argmax(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, needs))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        out.ensure_finite("linear")?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(out, Op::Linear { input, weight, bias }, needs))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::new(shape, self.value(input).data().to_vec())?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Reshape(input), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        out.ensure_finite("add")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let out = ops::pixel_shuffle(self.value(input), r)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::PixelShuffle { input, r }, needs))
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let out = ops::softmax(self.value(z))?;
        let needs = self.needs(z);
        Ok(self.push(out, Op::Softmax(z), needs))
    }

    /// Scalar cross-entropy of probabilities `probs` against (one-hot) `target`.
    pub fn cross_entropy(&mut self, probs: Var, target: Tensor) -> Result<Var> {
        let (loss, clamped) = ops::cross_entropy_loss(self.value(probs), &target)?;
        if clamped > 0 {
            log::warn!("cross entropy clamped {clamped} zero probabilities at the true class");
            self.clamp_warnings += clamped;
        }
        let needs = self.needs(probs);
        Ok(self.push(Tensor::full(&[1], loss), Op::CrossEntropy { probs, target }, needs))
    }

    /// Mean absolute error over the samples whose `include` flag is set.
    /// With no sample included the loss is zero and no gradient flows.
    pub fn masked_l1(&mut self, pred: Var, target: Tensor, include: Vec<bool>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape().first() != Some(&include.len()) {
            return Err(Error::dim(format!(
                "masked_l1: prediction {:?}, target {:?}, {} mask entries",
                p.shape(),
                target.shape(),
                include.len()
            )));
        }
        let per = p.numel() / include.len().max(1);
        let selected = include.iter().filter(|&&m| m).count();
        let mut total = 0.0f64;
        for (i, (pc, tc)) in p.data().chunks(per).zip(target.data().chunks(per)).enumerate() {
            if include[i] {
                total += pc.iter().zip(tc).map(|(a, b)| f64::from((a - b).abs())).sum::<f64>();
            }
        }
        let loss = if selected == 0 {
            0.0
        } else {
            (total / (selected * per) as f64) as f32
        };
        if !loss.is_finite() {
            return Err(Error::Numeric("masked L1 loss is not finite".into()));
        }
        let needs = self.needs(pred) && selected > 0;
        Ok(self.push(Tensor::full(&[1], loss), Op::MaskedL1 { pred, target, include }, needs))
    }

    /// Back-propagates from a scalar node. Gradients of every differentiable
    /// node are (re)computed from scratch; nothing accumulates across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at node {idx}")));
            }
            let contributions = self.local_backward(idx, &g)?;
            for (target, delta) in contributions {
                if !self.nodes[target.0].needs_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, g: &[f32]) -> Result<Vec<(Var, Vec<f32>)>> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                out.push((
                    *x,
                    g.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                ));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![0.0f32; self.value(*input).numel()];
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] += gi;
                }
                out.push((*input, dx));
            }
            Op::PixelShuffle { input, r } => {
                let s = self.value(*input).shape();
                let mut dx = vec![0.0f32; g.len()];
                for (src, dst) in ops::shuffle_index_pairs(s[0], s[1] / (r * r), s[2], s[3], *r) {
                    dx[src] = g[dst];
                }
                out.push((*input, dx));
            }
            Op::Softmax(z) => {
                let y = node.value.data();
                let c = node.value.shape()[1];
                let mut dz = vec![0.0f32; y.len()];
                for ((dzr, yr), gr) in dz.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dzr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*z, dz));
            }
            Op::CrossEntropy { probs, target } => {
                let p = self.value(*probs);
                let scale = g[0] / (p.shape()[0] * p.shape()[1]) as f32;
                let dp = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| -scale * t / p.max(LOG_CLAMP))
                    .collect();
                out.push((*probs, dp));
            }
            Op::MaskedL1 { pred, target, include } => {
                let p = self.value(*pred);
                let per = p.numel() / include.len();
                let selected = include.iter().filter(|&&m| m).count();
                let scale = g[0] / (selected * per) as f32;
                let mut dp = vec![0.0f32; p.numel()];
                for (i, (dc, (pc, tc))) in dp
                    .chunks_mut(per)
                    .zip(p.data().chunks(per).zip(target.data().chunks(per)))
                    .enumerate()
                {
                    if include[i] {
                        for ((d, a), b) in dc.iter_mut().zip(pc).zip(tc) {
                            let diff = a - b;
                            *d = if diff > 0.0 {
                                scale
                            } else if diff < 0.0 {
                                -scale
                            } else {
                                0.0
                            };
                        }
                    }
                }
                out.push((*pred, dp));
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, d, k) = linear_dims(x.shape(), w.shape(), self.value(*bias).shape())?;
                if self.needs(*input) {
                    let mut dx = vec![0.0f32; n * d];
                    gemm(n, k, d, g, (k, 1), w.data(), (d, 1), 0.0, &mut dx);
                    out.push((*input, dx));
                }
                if self.needs(*weight) {
                    let mut dw = vec![0.0f32; k * d];
                    gemm(k, n, d, g, (1, k), x.data(), (d, 1), 0.0, &mut dw);
                    out.push((*weight, dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0f32; k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    out.push((*bias, db));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let geom = conv_geometry(x.shape(), w.shape(), self.value(*bias).shape(), *stride, *pad)?;
                let n = x.shape()[0];
                let (k, p) = (geom.patch_len(), geom.out_pixels());
                let in_len = geom.cin * geom.h * geom.w;
                let out_len = geom.cout * p;
                let want_dx = self.needs(*input);
                let want_dw = self.needs(*weight);
                // Per-sample partials are reduced afterwards in sample order so the
                // result does not depend on thread scheduling.
                let partials: Vec<(Vec<f32>, Vec<f32>)> = x
                    .data()
                    .par_chunks(in_len)
                    .zip(g.par_chunks(out_len))
                    .map_init(
                        || vec![0.0f32; k * p],
                        |cols, (xs, gs)| {
                            let mut dw = Vec::new();
                            if want_dw {
                                im2col(xs, &geom, cols);
                                dw = vec![0.0f32; geom.cout * k];
                                gemm(geom.cout, p, k, gs, (p, 1), cols, (1, p), 0.0, &mut dw);
                            }
                            let mut dx = Vec::new();
                            if want_dx {
                                gemm(k, geom.cout, p, w.data(), (1, k), gs, (p, 1), 0.0, cols);
                                dx = vec![0.0f32; in_len];
                                col2im(cols, &geom, &mut dx);
                            }
                            (dx, dw)
                        },
                    )
                    .collect();
                if want_dx {
                    let mut dx = Vec::with_capacity(n * in_len);
                    for (d, _) in &partials {
                        dx.extend_from_slice(d);
                    }
                    out.push((*input, dx));
                }
                if want_dw {
                    let mut dw = vec![0.0f32; geom.cout * k];
                    for (_, d) in &partials {
                        dw.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                    }
                    out.push((*weight, dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0f32; geom.cout];
                    for gs in g.chunks(out_len) {
                        for (co, row) in gs.chunks(p).enumerate() {
                            db[co] += row.iter().sum::<f32>();
                        }
                    }
                    out.push((*bias, db));
                }
            }
        }
        Ok(out)
    }
}
