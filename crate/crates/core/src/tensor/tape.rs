//! Wengert-list reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every op's inputs precede it
//! and `backward` is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{CpmError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom, cols: Option<Vec<T>> },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Relu { input: Var },
    Concat { inputs: Vec<Var> },
    Sum { input: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    SqErrSum { pred: Var, target: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = super::Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.clear_grad();
        self.push(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a node's value out, leaving an empty tensor behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    /// Hash of every ReLU sign mask and maxpool argmax on the tape. Two
    /// evaluations with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &x in self.nodes[input.0].value.data() {
                        (x > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn output(&self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var]) -> Tensor<T> {
        let track = inputs.iter().any(|&v| self.tracks(v));
        Tensor::new(shape, data).expect("op produced consistent shape").with_requires_grad(track)
    }

    /// Cross-correlation with zero padding. `input` is `[N,C,H,W]`, `kernel`
    /// is `[F,C,kH,kW]`, `bias` is `[F]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (f, kc, kh, kw) = self.value(kernel).dims4()?;
        if kc != c {
            return Err(CpmError::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if self.value(bias).shape() != [f] {
            return Err(CpmError::shape(
                "conv2d",
                format!("bias shape {:?} for {f} filters", self.value(bias).shape()),
            ));
        }
        if stride == 0 {
            return Err(CpmError::shape("conv2d", "stride must be positive"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(CpmError::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
            ));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom { c, h, w, kh, kw, stride, pad: padding, ho, wo };
        let (k_rows, l) = (geom.rows(), geom.cols());

        let keep_cols = self.tracks(kernel) && !geom.is_pointwise();
        let mut cols_all = keep_cols.then(|| vec![T::zero(); n * k_rows * l]);
        let mut scratch = if geom.is_pointwise() || keep_cols { Vec::new() } else { vec![T::zero(); k_rows * l] };

        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = vec![T::zero(); n * f * l];
        for i in 0..n {
            let xi = &x[i * c * h * w..(i + 1) * c * h * w];
            let cols: &[T] = if geom.is_pointwise() {
                xi
            } else {
                let buf = match cols_all.as_mut() {
                    Some(all) => &mut all[i * k_rows * l..(i + 1) * k_rows * l],
                    None => &mut scratch[..],
                };
                kernels::im2col(&geom, xi, buf);
                buf
            };
            let oi = &mut out[i * f * l..(i + 1) * f * l];
            for (fi, row) in oi.chunks_mut(l).enumerate() {
                row.fill(bd[fi]);
            }
            T::gemm(f, k_rows, l, kd, false, cols, false, T::one(), oi);
        }
        let value = self.output(vec![n, f, ho, wo], out, &[input, kernel, bias]);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom, cols: cols_all }))
    }

    /// 2×2 max pooling with stride 2.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(CpmError::shape("maxpool2", format!("spatial size {h}x{w} must be even")));
        }
        let mut out = vec![T::zero(); n * c * (h / 2) * (w / 2)];
        let argmax = kernels::maxpool2(n * c, h, w, self.value(input).data(), &mut out);
        let value = self.output(vec![n, c, h / 2, w / 2], out, &[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = self.output(x.shape().to_vec(), data, &[input]);
        self.push(value, Op::Relu { input })
    }

    /// Stacks `[N,Ci,H,W]` inputs along the channel axis in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| CpmError::shape("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(CpmError::shape(
                    "concat_channels",
                    format!("expected N,H,W = {n},{h},{w}, got {vn},{vh},{vw}"),
                ));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (&v, &ci) in inputs.iter().zip(&channels) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[i * ci * plane..(i + 1) * ci * plane]);
            }
        }
        let value = self.output(vec![n, total, h, w], out, inputs);
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        let value = self.output(vec![1], vec![s], &[input]);
        self.push(value, Op::Sum { input })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = self.output(self.value(a).shape().to_vec(), data, &[a, b]);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = self.output(self.value(a).shape().to_vec(), data, &[a, b]);
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// `Σ (pred − target)²` against a constant target.
    pub fn sq_err_sum(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(CpmError::shape(
                "sq_err_sum",
                format!("prediction {:?} vs target {:?}", self.value(pred).shape(), target.shape()),
            ));
        }
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let value = self.output(vec![1], vec![s], &[pred]);
        Ok(self.push(value, Op::SqErrSum { pred, target: target.data().to_vec() }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CpmError::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into every
    /// tracked node upstream of it. Returns the number of ops visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(CpmError::NonScalarLoss(shape));
        }
        if !self.tracks(loss) {
            return Ok(0);
        }
        *self.nodes[loss.0].value.grad_mut() = Some(vec![T::one()]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if matches!(node.op, Op::Leaf) || !node.value.requires_grad() {
                continue;
            }
            let Some(g) = node.value.grad() else { continue };
            visited += 1;
            backprop(&node.op, &node.value, g, before);
        }
        Ok(visited)
    }
}

/// Adds a contribution into `nodes[v]`'s gradient if it is tracked.
fn with_grad<T: Real>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&mut [T], &[Node<T>])) {
    if !nodes[v.0].value.requires_grad() {
        return;
    }
    let numel = nodes[v.0].value.numel();
    let mut buf = nodes[v.0].value.grad_mut().take().unwrap_or_else(|| vec![T::zero(); numel]);
    f(&mut buf, nodes);
    *nodes[v.0].value.grad_mut() = Some(buf);
}

fn backprop<T: Real>(op: &Op<T>, out: &Tensor<T>, g: &[T], nodes: &mut [Node<T>]) {
    match op {
        Op::Leaf => {}
        Op::Relu { input } => with_grad(nodes, *input, |buf, nodes| {
            for ((b, &x), &gi) in buf.iter_mut().zip(nodes[input.0].value.data()).zip(g) {
                if x > T::zero() {
                    *b += gi;
                }
            }
        }),
        Op::MaxPool2 { input, argmax } => with_grad(nodes, *input, |buf, _| {
            for (&idx, &gi) in argmax.iter().zip(g) {
                buf[idx as usize] += gi;
            }
        }),
        Op::Concat { inputs } => {
            let (n, total, h, w) = out.dims4().expect("concat output is rank 4");
            let plane = h * w;
            let mut offset = 0;
            for &v in inputs {
                let ci = nodes[v.0].value.shape()[1];
                with_grad(nodes, v, |buf, _| {
                    for i in 0..n {
                        let src = &g[(i * total + offset) * plane..(i * total + offset + ci) * plane];
                        let dst = &mut buf[i * ci * plane..(i + 1) * ci * plane];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
                offset += ci;
            }
        }
        Op::Sum { input } => with_grad(nodes, *input, |buf, _| {
            for b in buf.iter_mut() {
                *b += g[0];
            }
        }),
        Op::Mul { a, b } => {
            let (a, b) = (*a, *b);
            with_grad(nodes, a, |buf, nodes| {
                for ((d, &y), &gi) in buf.iter_mut().zip(nodes[b.0].value.data()).zip(g) {
                    *d += gi * y;
                }
            });
            with_grad(nodes, b, |buf, nodes| {
                for ((d, &x), &gi) in buf.iter_mut().zip(nodes[a.0].value.data()).zip(g) {
                    *d += gi * x;
                }
            });
        }
        Op::Add { a, b } => {
            for v in [*a, *b] {
                with_grad(nodes, v, |buf, _| {
                    for (d, &gi) in buf.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
        }
        Op::SqErrSum { pred, target } => with_grad(nodes, *pred, |buf, nodes| {
            let two = T::one() + T::one();
            for ((d, &p), &t) in buf.iter_mut().zip(nodes[pred.0].value.data()).zip(target) {
                *d += two * (p - t) * g[0];
            }
        }),
        Op::Conv2d { input, kernel, bias, geom, cols } => {
            let n = out.shape()[0];
            let f = out.shape()[1];
            let (k_rows, l) = (geom.rows(), geom.cols());
            let in_len = geom.c * geom.h * geom.w;
            with_grad(nodes, *bias, |buf, _| {
                for i in 0..n {
                    for (fi, row) in g[i * f * l..(i + 1) * f * l].chunks(l).enumerate() {
                        buf[fi] += row.iter().copied().sum();
                    }
                }
            });
            with_grad(nodes, *kernel, |buf, nodes| {
                let x = nodes[input.0].value.data();
                let mut scratch = Vec::new();
                for i in 0..n {
                    let gi = &g[i * f * l..(i + 1) * f * l];
                    let ci: &[T] = if geom.is_pointwise() {
                        &x[i * in_len..(i + 1) * in_len]
                    } else if let Some(all) = cols {
                        &all[i * k_rows * l..(i + 1) * k_rows * l]
                    } else {
                        scratch.resize(k_rows * l, T::zero());
                        kernels::im2col(geom, &x[i * in_len..(i + 1) * in_len], &mut scratch);
                        &scratch
                    };
                    // dK[F,K] += g[F,L] · colsᵀ[L,K]
                    T::gemm(f, l, k_rows, gi, false, ci, true, T::one(), buf);
                }
            });
            with_grad(nodes, *input, |buf, nodes| {
                let kd = nodes[kernel.0].value.data();
                let mut dcols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k_rows * l] };
                for i in 0..n {
                    let gi = &g[i * f * l..(i + 1) * f * l];
                    let dst = &mut buf[i * in_len..(i + 1) * in_len];
                    // dcols[K,L] = Kᵀ[K,F] · g[F,L]
                    if geom.is_pointwise() {
                        T::gemm(k_rows, f, l, kd, true, gi, false, T::one(), dst);
                    } else {
                        T::gemm(k_rows, f, l, kd, true, gi, false, T::zero(), &mut dcols);
                        kernels::col2im_add(geom, &dcols, dst);
                    }
                }
            });
        }
    }
}
