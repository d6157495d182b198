//! Pooling ops: spatial max/average pooling and the temporal max reduction.
//!
//! Max-style ops record the flat input index of each selected element (first
//! maximum on ties) so the backward pass is a deterministic scatter-add.

use crate::tensor::{Scalar, Tensor};

fn pooled_dims(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> (usize, usize) {
    ((h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1)
}

pub fn maxpool2d_forward<E: Scalar>(
    x: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> (Tensor<E>, Vec<u32>) {
    assert!(x.numel() < u32::MAX as usize);
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = pooled_dims(h, w, kernel, stride);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let plane = &x.data()[base..base + h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = E::neg_infinity();
                let mut best_at = 0usize;
                for ky in 0..kernel.0 {
                    let iy = oy * stride.0 + ky;
                    for kx in 0..kernel.1 {
                        let ix = ox * stride.1 + kx;
                        let v = plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_at = iy * w + ix;
                        }
                    }
                }
                out.push(best);
                argmax.push((base + best_at) as u32);
            }
        }
    }
    (Tensor::new(vec![n, c, ho, wo], out), argmax)
}

pub fn avgpool2d_forward<E: Scalar>(
    x: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Tensor<E> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = pooled_dims(h, w, kernel, stride);
    let norm = E::one() / E::from_f64((kernel.0 * kernel.1) as f64);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane_idx in 0..n * c {
        let plane = &x.data()[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = E::zero();
                for ky in 0..kernel.0 {
                    let iy = oy * stride.0 + ky;
                    let row = &plane[iy * w + ox * stride.1..][..kernel.1];
                    for &v in row {
                        acc += v;
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn avgpool2d_backward<E: Scalar>(
    x_shape: &[usize],
    gy: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Tensor<E> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = pooled_dims(h, w, kernel, stride);
    let norm = E::one() / E::from_f64((kernel.0 * kernel.1) as f64);
    let mut dx = vec![E::zero(); x_shape.iter().product()];
    for plane_idx in 0..n * c {
        let plane = &mut dx[plane_idx * h * w..(plane_idx + 1) * h * w];
        let gplane = &gy.data()[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gplane[oy * wo + ox] * norm;
                for ky in 0..kernel.0 {
                    let iy = oy * stride.0 + ky;
                    let row = &mut plane[iy * w + ox * stride.1..][..kernel.1];
                    for v in row {
                        *v += g;
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Max over the frame axis of the flattened `[B*T, C, H, W]` stack.
pub fn temporal_max_forward<E: Scalar>(
    x: &Tensor<E>,
    batch: usize,
    frames: usize,
) -> (Tensor<E>, Vec<u32>) {
    assert!(x.numel() < u32::MAX as usize);
    let plane = x.shape()[1] * x.shape()[2] * x.shape()[3];
    let mut out = vec![E::neg_infinity(); batch * plane];
    let mut argmax = vec![0u32; batch * plane];
    for b in 0..batch {
        let dst = &mut out[b * plane..(b + 1) * plane];
        let arg = &mut argmax[b * plane..(b + 1) * plane];
        for t in 0..frames {
            let base = (b * frames + t) * plane;
            let src = &x.data()[base..base + plane];
            for (i, &v) in src.iter().enumerate() {
                if v > dst[i] {
                    dst[i] = v;
                    arg[i] = (base + i) as u32;
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = batch;
    (Tensor::new(shape, out), argmax)
}

/// Backward for max-style ops: routes each output gradient to the recorded
/// input index.
pub fn scatter_by_index<E: Scalar>(x_shape: &[usize], gy: &Tensor<E>, index: &[u32]) -> Tensor<E> {
    let mut dx = vec![E::zero(); x_shape.iter().product()];
    for (&i, &g) in index.iter().zip(gy.data()) {
        dx[i as usize] += g;
    }
    Tensor::new(x_shape.to_vec(), dx)
}
