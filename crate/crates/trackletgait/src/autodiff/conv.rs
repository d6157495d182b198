//! Convolution kernels: 2-D cross-correlation (im2col + GEMM), grouped 1-D
//! temporal convolution, and the channel-wise Haar transform.
//!
//! Parallel loops split over the batch axis only; within one output element
//! the reduction order is fixed, so results are bit-stable across thread
//! counts.

use rayon::prelude::*;

use crate::haar;
use crate::tensor::{Scalar, Tensor};

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>, stride: usize, pad: usize) -> ConvDims {
    let (xs, ws) = (x.shape(), w.shape());
    ConvDims {
        batch: xs[0],
        cin: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ws[0],
        kh: ws[2],
        kw: ws[3],
        ho: (xs[2] + 2 * pad - ws[2]) / stride + 1,
        wo: (xs[3] + 2 * pad - ws[3]) / stride + 1,
    }
}

/// Fills `col` (`cin*kh*kw` rows by `ho*wo` columns) from one input image.
fn im2col<E: Scalar>(x: &[E], d: &ConvDims, stride: usize, pad: usize, col: &mut [E]) {
    let len = d.ho * d.wo;
    col.fill(E::zero());
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut col[((ci * d.kh + ky) * d.kw + kx) * len..][..len];
                if stride == 1 {
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (d.w + pad - kx).min(d.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..d.ho {
                        let iy = (oy + ky).wrapping_sub(pad);
                        if iy >= d.h {
                            continue;
                        }
                        let src = &plane[iy * d.w + (ox_lo + kx - pad)..][..ox_hi - ox_lo];
                        row[oy * d.wo + ox_lo..][..ox_hi - ox_lo].copy_from_slice(src);
                    }
                } else {
                    for oy in 0..d.ho {
                        let iy = (oy * stride + ky).wrapping_sub(pad);
                        if iy >= d.h {
                            continue;
                        }
                        for ox in 0..d.wo {
                            let ix = (ox * stride + kx).wrapping_sub(pad);
                            if ix < d.w {
                                row[oy * d.wo + ox] = plane[iy * d.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-gradient matrix back onto one input-image gradient.
fn col2im_add<E: Scalar>(col: &[E], d: &ConvDims, stride: usize, pad: usize, dx: &mut [E]) {
    let len = d.ho * d.wo;
    for ci in 0..d.cin {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &col[((ci * d.kh + ky) * d.kw + kx) * len..][..len];
                if stride == 1 {
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (d.w + pad - kx).min(d.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..d.ho {
                        let iy = (oy + ky).wrapping_sub(pad);
                        if iy >= d.h {
                            continue;
                        }
                        let dst = &mut plane[iy * d.w + (ox_lo + kx - pad)..][..ox_hi - ox_lo];
                        for (a, &g) in dst.iter_mut().zip(&row[oy * d.wo + ox_lo..][..ox_hi - ox_lo]) {
                            *a += g;
                        }
                    }
                } else {
                    for oy in 0..d.ho {
                        let iy = (oy * stride + ky).wrapping_sub(pad);
                        if iy >= d.h {
                            continue;
                        }
                        for ox in 0..d.wo {
                            let ix = (ox * stride + kx).wrapping_sub(pad);
                            if ix < d.w {
                                plane[iy * d.w + ix] += row[oy * d.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(d: &ConvDims, stride: usize, pad: usize) -> bool {
    d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0
}

pub fn conv2d_forward<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>, stride: usize, pad: usize) -> Tensor<E> {
    let d = conv_dims(x, w, stride, pad);
    let k = d.cin * d.kh * d.kw;
    let len = d.ho * d.wo;
    let mut out = vec![E::zero(); d.batch * d.cout * len];
    let pointwise = is_pointwise(&d, stride, pad);

    out.par_chunks_mut(d.cout * len)
        .zip(x.data().par_chunks(d.cin * d.h * d.w))
        .for_each_init(
            || if pointwise { Vec::new() } else { vec![E::zero(); k * len] },
            |col, (out_b, x_b)| {
                let cols = if pointwise {
                    x_b
                } else {
                    im2col(x_b, &d, stride, pad, col);
                    col.as_slice()
                };
                E::gemm(d.cout, k, len, E::one(), w.data(), cols, E::zero(), out_b);
            },
        );

    Tensor::new(vec![d.batch, d.cout, d.ho, d.wo], out)
}

pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gy: &Tensor<E>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<E>>, Option<Tensor<E>>) {
    let d = conv_dims(x, w, stride, pad);
    let k = d.cin * d.kh * d.kw;
    let len = d.ho * d.wo;
    let pointwise = is_pointwise(&d, stride, pad);

    let dx = need_dx.then(|| {
        let mut dx = vec![E::zero(); x.numel()];
        dx.par_chunks_mut(d.cin * d.h * d.w)
            .zip(gy.data().par_chunks(d.cout * len))
            .for_each_init(
                || vec![E::zero(); k * len],
                |colgrad, (dx_b, gy_b)| {
                    // colgrad = w^T (k x cout) . gy_b (cout x len)
                    E::gemm_strided(
                        k, d.cout, len, E::one(),
                        w.data(), 1, k as isize,
                        gy_b, len as isize, 1,
                        E::zero(),
                        colgrad, len as isize, 1,
                    );
                    if pointwise {
                        dx_b.copy_from_slice(colgrad);
                    } else {
                        col2im_add(colgrad, &d, stride, pad, dx_b);
                    }
                },
            );
        Tensor::new(x.shape().to_vec(), dx)
    });

    let dw = need_dw.then(|| {
        let mut dw = vec![E::zero(); w.numel()];
        let mut col = if pointwise { Vec::new() } else { vec![E::zero(); k * len] };
        for b in 0..d.batch {
            let x_b = &x.data()[b * d.cin * d.h * d.w..][..d.cin * d.h * d.w];
            let gy_b = &gy.data()[b * d.cout * len..][..d.cout * len];
            let cols = if pointwise {
                x_b
            } else {
                im2col(x_b, &d, stride, pad, &mut col);
                col.as_slice()
            };
            // dw (cout x k) += gy_b (cout x len) . cols^T (len x k)
            E::gemm_strided(
                d.cout, len, k, E::one(),
                gy_b, len as isize, 1,
                cols, 1, len as isize,
                E::one(),
                &mut dw, k as isize, 1,
            );
        }
        Tensor::new(w.shape().to_vec(), dw)
    });

    (dx, dw)
}

/// Forward grouped temporal convolution; `x` is the flattened `[B*T, C, H, W]`
/// view of a `[B, T, C, H, W]` stack.
pub fn tconv1d_forward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    _batch: usize,
    frames: usize,
    groups: usize,
) -> Tensor<E> {
    let c = x.shape()[1];
    let plane = x.shape()[2] * x.shape()[3];
    let cg = c / groups;
    let k = w.shape()[2];
    let pad = (k - 1) / 2;
    let mut out = vec![E::zero(); x.numel()];

    out.par_chunks_mut(frames * c * plane)
        .zip(x.data().par_chunks(frames * c * plane))
        .for_each(|(out_b, x_b)| {
            for co in 0..c {
                let ci0 = (co / cg) * cg;
                for t in 0..frames {
                    let dst = &mut out_b[(t * c + co) * plane..][..plane];
                    for j in 0..k {
                        let tt = (t + j).wrapping_sub(pad);
                        if tt >= frames {
                            continue;
                        }
                        for cl in 0..cg {
                            let coef = w.data()[(co * cg + cl) * k + j];
                            if coef == E::zero() {
                                continue;
                            }
                            let src = &x_b[(tt * c + ci0 + cl) * plane..][..plane];
                            for (o, &v) in dst.iter_mut().zip(src) {
                                *o += coef * v;
                            }
                        }
                    }
                }
            }
        });

    Tensor::new(x.shape().to_vec(), out)
}

#[allow(clippy::too_many_arguments)]
pub fn tconv1d_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gy: &Tensor<E>,
    batch: usize,
    frames: usize,
    groups: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<E>>, Option<Tensor<E>>) {
    let c = x.shape()[1];
    let plane = x.shape()[2] * x.shape()[3];
    let cg = c / groups;
    let k = w.shape()[2];
    let pad = (k - 1) / 2;

    let dx = need_dx.then(|| {
        let mut dx = vec![E::zero(); x.numel()];
        dx.par_chunks_mut(frames * c * plane)
            .zip(gy.data().par_chunks(frames * c * plane))
            .for_each(|(dx_b, gy_b)| {
                for ci in 0..c {
                    let group = ci / cg;
                    let cl = ci % cg;
                    for tt in 0..frames {
                        let dst = &mut dx_b[(tt * c + ci) * plane..][..plane];
                        for j in 0..k {
                            // forward: out[t] reads x[t + j - pad]; adjoint: t = tt + pad - j
                            let t = (tt + pad).wrapping_sub(j);
                            if t >= frames {
                                continue;
                            }
                            for co in group * cg..(group + 1) * cg {
                                let coef = w.data()[(co * cg + cl) * k + j];
                                if coef == E::zero() {
                                    continue;
                                }
                                let src = &gy_b[(t * c + co) * plane..][..plane];
                                for (o, &v) in dst.iter_mut().zip(src) {
                                    *o += coef * v;
                                }
                            }
                        }
                    }
                }
            });
        Tensor::new(x.shape().to_vec(), dx)
    });

    let dw = need_dw.then(|| {
        let mut dw = vec![E::zero(); w.numel()];
        dw.par_chunks_mut(cg * k)
            .enumerate()
            .for_each(|(co, dw_co)| {
                let ci0 = (co / cg) * cg;
                for b in 0..batch {
                    let x_b = &x.data()[b * frames * c * plane..][..frames * c * plane];
                    let gy_b = &gy.data()[b * frames * c * plane..][..frames * c * plane];
                    for t in 0..frames {
                        let g = &gy_b[(t * c + co) * plane..][..plane];
                        for j in 0..k {
                            let tt = (t + j).wrapping_sub(pad);
                            if tt >= frames {
                                continue;
                            }
                            for cl in 0..cg {
                                let src = &x_b[(tt * c + ci0 + cl) * plane..][..plane];
                                let mut acc = E::zero();
                                for (&a, &b_) in g.iter().zip(src) {
                                    acc += a * b_;
                                }
                                dw_co[cl * k + j] += acc;
                            }
                        }
                    }
                }
            });
        Tensor::new(w.shape().to_vec(), dw)
    });

    (dx, dw)
}

/// `[N, C, H, W] -> [N, 4C, H/2, W/2]`, subbands `[LL, LH, HL, HH]` grouped
/// per source channel (output channel `4c + s`).
pub fn dwt2_forward<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (h2, w2) = (h / 2, w / 2);
    let band = h2 * w2;
    let mut out = vec![E::zero(); x.numel()];

    out.par_chunks_mut(4 * band)
        .zip(x.data().par_chunks(h * w))
        .for_each(|(out_c, plane)| {
            let (ll, rest) = out_c.split_at_mut(band);
            let (lh, rest) = rest.split_at_mut(band);
            let (hl, hh) = rest.split_at_mut(band);
            haar::dwt2_into(plane, h, w, ll, lh, hl, hh);
        });

    Tensor::new(vec![n, 4 * c, h2, w2], out)
}

/// Adjoint of [`dwt2_forward`]: each input pixel receives the signed sum of
/// the four subband gradients of its block (no 1/4 scaling).
pub fn dwt2_backward<E: Scalar>(x_shape: &[usize], gy: &Tensor<E>) -> Tensor<E> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (h2, w2) = (h / 2, w / 2);
    let band = h2 * w2;
    let mut dx = vec![E::zero(); x_shape.iter().product()];

    dx.par_chunks_mut(h * w)
        .zip(gy.data().par_chunks(4 * band))
        .for_each(|(plane, gy_c)| {
            let (ll, rest) = gy_c.split_at(band);
            let (lh, rest) = rest.split_at(band);
            let (hl, hh) = rest.split_at(band);
            haar::recombine_into(ll, lh, hl, hh, h2, w2, E::one(), plane);
        });

    Tensor::new(x_shape.to_vec(), dx)
}
