//! Reverse-mode automatic differentiation over a recorded op tape.
//!
//! A [`Graph`] records every operation of one forward pass in execution order.
//! [`Graph::backward`] walks the tape in exact reverse order, accumulating
//! gradients into per-parameter slots. Each op's backward consumes only values
//! captured at forward time, so a graph can be replayed safely.
//!
//! The op set is deliberately fixed to what the backbone, head, and losses
//! need; there is no broadcasting engine, and every shape mismatch is an
//! error rather than a silent promotion. Forward passes are bit-deterministic
//! for fixed inputs: parallel loops only split work so that each output
//! element has a single writer with a fixed reduction order.

mod conv;
mod gradcheck;
mod linear;
mod norm;
mod pool;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckReport};

use thiserror::Error;

use crate::loss::kernel::{self, TripletConfig, TripletDiagnostics};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel count {channels} not divisible by {groups} groups")]
    Group { channels: usize, groups: usize },
    #[error("spatial dimensions must be even, got {h}x{w}")]
    OddDimension { h: usize, w: usize },
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, GraphError> {
    Err(GraphError::Shape(msg.into()))
}

/// Whether batch statistics are computed (train) or running stats used (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub type NodeId = usize;

/// Decomposition of a tensor as `[outer, channels, inner]` around the
/// normalized axis; used by batchnorm for both 4-D feature maps and
/// per-part 1-D embeddings.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChannelLayout {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

#[derive(Debug)]
pub(crate) struct BnSaved<E> {
    pub xhat: Vec<E>,
    pub invstd: Vec<E>,
    pub layout: ChannelLayout,
}

#[derive(Debug)]
enum Op<E: Scalar> {
    Leaf,
    Param { slot: usize },
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    TConv1d { x: NodeId, w: NodeId, batch: usize, frames: usize, groups: usize },
    Dwt2 { x: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, saved: BnSaved<E> },
    Relu { x: NodeId },
    MaxPool2d { x: NodeId, kernel: (usize, usize), stride: (usize, usize), argmax: Vec<u32> },
    AvgPool2d { x: NodeId, kernel: (usize, usize), stride: (usize, usize) },
    TemporalMax { x: NodeId, batch: usize, frames: usize, argmax: Vec<u32> },
    MatMul { a: NodeId, b: NodeId },
    PartLinear { x: NodeId, w: NodeId, bias: NodeId },
    PartClassifier { x: NodeId, w: NodeId },
    SwapAxes12 { x: NodeId },
    Reshape { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: E },
    MeanAll { x: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, probs: Tensor<E>, labels: Vec<usize> },
    Triplet { x: NodeId, grad: Tensor<E> },
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
}

/// Gradients accumulated per parameter slot by one backward pass.
#[derive(Debug)]
pub struct Gradients<E: Scalar> {
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn slot(&self, slot: usize) -> Option<&Tensor<E>> {
        self.slots.get(slot).and_then(|g| g.as_ref())
    }

    pub fn take_slot(&mut self, slot: usize) -> Option<Tensor<E>> {
        self.slots.get_mut(slot).and_then(|g| g.take())
    }
}

/// A recorded forward pass.
pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    mode: Mode,
}

impl<E: Scalar> Graph<E> {
    pub fn new(mode: Mode) -> Self {
        Graph { nodes: Vec::new(), mode }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// A constant input; never receives gradient.
    pub fn input(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable parameter; its gradient accumulates into `slot`.
    pub fn param(&mut self, slot: usize, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Param { slot }, true)
    }

    /// 2-D cross-correlation over `[B, Cin, H, W]` with kernel `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId, GraphError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!("conv2d expects 4-D x and w, got {xs:?} and {ws:?}"));
        }
        if xs[1] != ws[1] {
            return shape_err(format!("conv2d channel mismatch: x has {}, w expects {}", xs[1], ws[1]));
        }
        let (h, w_) = (xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        if h + 2 * pad < kh || w_ + 2 * pad < kw {
            return shape_err(format!("kernel {kh}x{kw} larger than padded input {h}x{w_} (pad {pad})"));
        }
        if (h + 2 * pad - kh) % stride != 0 || (w_ + 2 * pad - kw) % stride != 0 {
            return shape_err(format!(
                "conv2d output size not integral for input {h}x{w_}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            ));
        }
        let value = conv::conv2d_forward(self.value(x), self.value(w), stride, pad);
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::Conv2d { x, w, stride, pad }, needs))
    }

    /// Grouped 1-D convolution along the frame axis of `[B*T, C, H, W]`
    /// (the flattened view of `[B, T, C, H, W]`), independently per spatial
    /// location, with zero padding of `(k-1)/2` frames at both ends.
    pub fn tconv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        batch: usize,
        frames: usize,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 3 {
            return shape_err(format!("tconv1d expects 4-D x and 3-D w, got {xs:?} and {ws:?}"));
        }
        if xs[0] != batch * frames {
            return shape_err(format!("tconv1d: leading dim {} != batch {batch} * frames {frames}", xs[0]));
        }
        let c = xs[1];
        if c % groups != 0 {
            return Err(GraphError::Group { channels: c, groups });
        }
        if ws[0] != c || ws[1] != c / groups {
            return shape_err(format!("tconv1d weight {ws:?} incompatible with {c} channels in {groups} groups"));
        }
        if ws[2] % 2 == 0 {
            return shape_err(format!("tconv1d kernel size {} must be odd", ws[2]));
        }
        let value = conv::tconv1d_forward(self.value(x), self.value(w), batch, frames, groups);
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::TConv1d { x, w, batch, frames, groups }, needs))
    }

    /// Channel-wise single-stage Haar transform: `[N, C, H, W]` becomes
    /// `[N, 4C, H/2, W/2]` with subbands ordered `[LL, LH, HL, HH]` per
    /// source channel.
    pub fn dwt2(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 4 {
            return shape_err(format!("dwt2 expects 4-D input, got {xs:?}"));
        }
        let (h, w) = (xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GraphError::OddDimension { h, w });
        }
        let value = conv::dwt2_forward(self.value(x));
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dwt2 { x }, needs))
    }

    /// Batch normalization over all non-channel axes with the layout
    /// `[outer, channels, inner]`. Train mode uses batch statistics
    /// (eps 1e-5) and updates `running_mean`/`running_var` in place with
    /// momentum 0.1; eval mode normalizes with the running statistics.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        channel_axis: usize,
        running_mean: &mut Tensor<E>,
        running_var: &mut Tensor<E>,
    ) -> Result<NodeId, GraphError> {
        let xs = self.value(x).shape().to_vec();
        if channel_axis >= xs.len() {
            return shape_err(format!("channel axis {channel_axis} out of range for {xs:?}"));
        }
        let layout = ChannelLayout {
            outer: xs[..channel_axis].iter().product(),
            channels: xs[channel_axis],
            inner: xs[channel_axis + 1..].iter().product(),
        };
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).numel() != layout.channels {
                return shape_err(format!(
                    "{name} has {} elements, expected {} channels",
                    self.value(id).numel(),
                    layout.channels
                ));
            }
        }
        if running_mean.numel() != layout.channels || running_var.numel() != layout.channels {
            return shape_err("running statistics do not match channel count".to_string());
        }
        let (value, saved) = norm::batchnorm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            layout,
            self.mode,
            running_mean,
            running_var,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, saved }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    pub fn maxpool2d(
        &mut self,
        x: NodeId,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.check_pool(x, kernel, stride)?;
        let (value, argmax) = pool::maxpool2d_forward(self.value(x), kernel, stride);
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPool2d { x, kernel, stride, argmax }, needs))
    }

    pub fn avgpool2d(
        &mut self,
        x: NodeId,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.check_pool(x, kernel, stride)?;
        let value = pool::avgpool2d_forward(self.value(x), kernel, stride);
        let needs = self.needs(x);
        Ok(self.push(value, Op::AvgPool2d { x, kernel, stride }, needs))
    }

    fn check_pool(&self, x: NodeId, kernel: (usize, usize), stride: (usize, usize)) -> Result<(), GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 4 {
            return shape_err(format!("pooling expects 4-D input, got {xs:?}"));
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return shape_err("zero pooling kernel or stride".to_string());
        }
        if xs[2] < kernel.0 || xs[3] < kernel.1 {
            return shape_err(format!("pooling kernel {kernel:?} larger than input {xs:?}"));
        }
        Ok(())
    }

    /// Elementwise maximum across the frame axis of `[B*T, C, H, W]`,
    /// reducing to `[B, C, H, W]`.
    pub fn temporal_max(&mut self, x: NodeId, batch: usize, frames: usize) -> Result<NodeId, GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 4 || xs[0] != batch * frames {
            return shape_err(format!("temporal_max: shape {xs:?} incompatible with {batch}x{frames}"));
        }
        let (value, argmax) = pool::temporal_max_forward(self.value(x), batch, frames);
        let needs = self.needs(x);
        Ok(self.push(value, Op::TemporalMax { x, batch, frames, argmax }, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul shapes {sa:?} x {sb:?}"));
        }
        let value = linear::matmul_forward(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b }, needs))
    }

    /// Per-part affine map: `[B, P, C] x [P, C, D] + [P, D] -> [B, P, D]`,
    /// an independent fully connected layer per part.
    pub fn part_linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(bias).shape());
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 2 {
            return shape_err(format!("part_linear shapes x{xs:?} w{ws:?} b{bs:?}"));
        }
        if xs[1] != ws[0] || xs[2] != ws[1] || bs[0] != ws[0] || bs[1] != ws[2] {
            return shape_err(format!("part_linear incompatible: x{xs:?} w{ws:?} b{bs:?}"));
        }
        let value = linear::part_linear_forward(self.value(x), self.value(w), self.value(bias));
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        Ok(self.push(value, Op::PartLinear { x, w, bias }, needs))
    }

    /// Per-part bias-free classifier: `[B, P, D] x [P, K, D] -> [B, P, K]`
    /// (inner products against per-class weight rows).
    pub fn part_classifier(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, GraphError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || xs[2] != ws[2] {
            return shape_err(format!("part_classifier shapes x{xs:?} w{ws:?}"));
        }
        let value = linear::part_classifier_forward(self.value(x), self.value(w));
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::PartClassifier { x, w }, needs))
    }

    /// Transpose the last two axes of a 3-D tensor.
    pub fn swap_axes12(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 3 {
            return shape_err(format!("swap_axes12 expects 3-D input, got {xs:?}"));
        }
        let value = linear::swap_axes12(self.value(x));
        let needs = self.needs(x);
        Ok(self.push(value, Op::SwapAxes12 { x }, needs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId, GraphError> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return shape_err(format!("reshape to {shape:?} from {:?}", self.value(x).shape()));
        }
        let value = self.value(x).clone().reshaped(shape);
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "add shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut value = self.value(a).clone();
        for (v, &u) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v += u;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: E) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = E::from_f64(self.value(x).numel() as f64);
        let sum = self.value(x).data().iter().fold(E::zero(), |acc, &v| acc + v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(sum / n), Op::MeanAll { x }, needs)
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against `N` class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, GraphError> {
        let ls = self.value(logits).shape();
        if ls.len() != 2 || ls[0] != labels.len() {
            return shape_err(format!("cross-entropy logits {ls:?} vs {} labels", labels.len()));
        }
        let classes = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return shape_err(format!("label {bad} out of range for {classes} classes"));
        }
        let (value, probs) = linear::softmax_ce_forward(self.value(logits), labels);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(E::from_f64(value)),
            Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() },
            needs,
        ))
    }

    /// Triplet loss over `[B, P, D]` embeddings with subject labels. Pair
    /// distances are part-averaged Euclidean distances; the configured
    /// variant decides mining and gating. Returns the loss node and the
    /// batch diagnostics (gate statistics, excluded pairs, term counts).
    pub fn triplet(
        &mut self,
        x: NodeId,
        labels: &[usize],
        config: &TripletConfig,
    ) -> Result<(NodeId, TripletDiagnostics), GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 3 || xs[0] != labels.len() {
            return shape_err(format!("triplet embeddings {xs:?} vs {} labels", labels.len()));
        }
        let out = kernel::triplet_forward(self.value(x), labels, config);
        let needs = self.needs(x);
        let id = self.push(
            Tensor::scalar(E::from_f64(out.loss)),
            Op::Triplet { x, grad: out.grad },
            needs,
        );
        Ok((id, out.diagnostics))
    }

    /// Reverse pass from a scalar loss node; returns gradients per parameter
    /// slot (`slot_count` slots). Node gradients are dropped as soon as they
    /// have been consumed.
    pub fn backward(&mut self, loss: NodeId, slot_count: usize) -> Gradients<E> {
        assert_eq!(self.value(loss).numel(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients { slots: (0..slot_count).map(|_| None).collect() };
        grads[loss] = Some(Tensor::scalar(E::one()));

        for id in (0..=loss).rev() {
            let Some(gy) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param { slot } => {
                    accumulate_param(&mut out.slots[*slot], gy);
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (x, w, stride, pad) = (*x, *w, *stride, *pad);
                    let (dx, dw) = conv::conv2d_backward(
                        self.value(x),
                        self.value(w),
                        &gy,
                        stride,
                        pad,
                        self.needs(x),
                        self.needs(w),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx);
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, w, dw);
                    }
                }
                Op::TConv1d { x, w, batch, frames, groups } => {
                    let (x, w, batch, frames, groups) = (*x, *w, *batch, *frames, *groups);
                    let (dx, dw) = conv::tconv1d_backward(
                        self.value(x),
                        self.value(w),
                        &gy,
                        batch,
                        frames,
                        groups,
                        self.needs(x),
                        self.needs(w),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx);
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, w, dw);
                    }
                }
                Op::Dwt2 { x } => {
                    let x = *x;
                    let dx = conv::dwt2_backward(self.value(x).shape(), &gy);
                    accumulate(&mut grads, x, dx);
                }
                Op::BatchNorm { x, gamma, beta, saved } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (dx, dgamma, dbeta) =
                        norm::batchnorm_backward(self.value(gamma), saved, &gy, self.mode, self.needs(x));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx);
                    }
                    accumulate(&mut grads, gamma, dgamma);
                    accumulate(&mut grads, beta, dbeta);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let mut dx = gy;
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                        if v <= E::zero() {
                            *g = E::zero();
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::MaxPool2d { x, argmax, .. } => {
                    let x = *x;
                    let dx = pool::scatter_by_index(self.value(x).shape(), &gy, argmax);
                    accumulate(&mut grads, x, dx);
                }
                Op::AvgPool2d { x, kernel, stride } => {
                    let (x, kernel, stride) = (*x, *kernel, *stride);
                    let dx = pool::avgpool2d_backward(self.value(x).shape(), &gy, kernel, stride);
                    accumulate(&mut grads, x, dx);
                }
                Op::TemporalMax { x, argmax, .. } => {
                    let x = *x;
                    let dx = pool::scatter_by_index(self.value(x).shape(), &gy, argmax);
                    accumulate(&mut grads, x, dx);
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (da, db) =
                        linear::matmul_backward(self.value(a), self.value(b), &gy, self.needs(a), self.needs(b));
                    if let Some(da) = da {
                        accumulate(&mut grads, a, da);
                    }
                    if let Some(db) = db {
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::PartLinear { x, w, bias } => {
                    let (x, w, bias) = (*x, *w, *bias);
                    let (dx, dw, db) =
                        linear::part_linear_backward(self.value(x), self.value(w), &gy, self.needs(x));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx);
                    }
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, bias, db);
                }
                Op::PartClassifier { x, w } => {
                    let (x, w) = (*x, *w);
                    let (dx, dw) =
                        linear::part_classifier_backward(self.value(x), self.value(w), &gy, self.needs(x));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx);
                    }
                    accumulate(&mut grads, w, dw);
                }
                Op::SwapAxes12 { x } => {
                    let x = *x;
                    let dx = linear::swap_axes12(&gy);
                    accumulate(&mut grads, x, dx);
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let dx = gy.reshaped(self.value(x).shape().to_vec());
                    accumulate(&mut grads, x, dx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(&mut grads, a, gy.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, gy);
                    }
                }
                Op::Scale { x, factor } => {
                    let (x, factor) = (*x, *factor);
                    accumulate(&mut grads, x, gy.map(|g| g * factor));
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    let n = self.value(x).numel();
                    let g = gy.item() / E::from_f64(n as f64);
                    accumulate(&mut grads, x, Tensor::full(self.value(x).shape().to_vec(), g));
                }
                Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                    let logits = *logits;
                    let n = labels.len();
                    let scale = gy.item() / E::from_f64(n as f64);
                    let classes = probs.shape()[1];
                    let mut dl = probs.clone();
                    {
                        let data = dl.data_mut();
                        for (i, &label) in labels.iter().enumerate() {
                            data[i * classes + label] -= E::one();
                        }
                        for v in data.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, logits, dl);
                }
                Op::Triplet { x, grad } => {
                    let x = *x;
                    let g = gy.item();
                    accumulate(&mut grads, x, grad.map(|v| v * g));
                }
            }
        }
        out
    }
}

fn accumulate<E: Scalar>(grads: &mut [Option<Tensor<E>>], id: NodeId, delta: Tensor<E>) {
    match &mut grads[id] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), delta.shape());
            for (a, &b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(delta),
    }
}

fn accumulate_param<E: Scalar>(slot: &mut Option<Tensor<E>>, delta: Tensor<E>) {
    match slot {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        empty => *empty = Some(delta),
    }
}

/// Named trainable parameters with per-parameter weight-decay eligibility.
#[derive(Debug, Clone)]
pub struct ParamStore<E: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
    decay: Vec<bool>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), decay: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, decay: bool) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.decay.push(decay);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, slot: usize) -> &Tensor<E> {
        &self.values[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor<E> {
        &mut self.values[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn decays(&self, slot: usize) -> bool {
        self.decay[slot]
    }

    /// Total count of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    /// Binds the parameter into a graph, yielding a node that routes
    /// gradients back to this slot.
    pub fn bind(&self, graph: &mut Graph<E>, slot: usize) -> NodeId {
        graph.param(slot, self.values[slot].clone())
    }
}

impl<E: Scalar> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Non-learnable persistent state (batchnorm running statistics).
#[derive(Debug, Clone)]
pub struct BufferStore<E: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
}

impl<E: Scalar> BufferStore<E> {
    pub fn new() -> Self {
        BufferStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn value(&self, slot: usize) -> &Tensor<E> {
        &self.values[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor<E> {
        &mut self.values[slot]
    }

    /// Temporarily moves a pair of buffers out for a batchnorm call.
    pub fn take_pair(&mut self, mean_slot: usize, var_slot: usize) -> (Tensor<E>, Tensor<E>) {
        let mean = std::mem::replace(&mut self.values[mean_slot], Tensor::zeros(vec![0]));
        let var = std::mem::replace(&mut self.values[var_slot], Tensor::zeros(vec![0]));
        (mean, var)
    }

    pub fn put_pair(&mut self, mean_slot: usize, var_slot: usize, mean: Tensor<E>, var: Tensor<E>) {
        self.values[mean_slot] = mean;
        self.values[var_slot] = var;
    }
}

impl<E: Scalar> Default for BufferStore<E> {
    fn default() -> Self {
        Self::new()
    }
}
