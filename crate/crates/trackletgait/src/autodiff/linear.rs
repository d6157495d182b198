//! Dense ops: plain matmul, the per-part affine map and classifier used by
//! the head, axis transposition, and softmax cross-entropy.
//!
//! Per-part ops run one strided GEMM per part directly on the packed
//! `[batch, parts, features]` layout, so no transposes or copies are needed.

use crate::tensor::{Scalar, Tensor};

pub fn matmul_forward<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![E::zero(); m * n];
    E::gemm(m, k, n, E::one(), a.data(), b.data(), E::zero(), &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn matmul_backward<E: Scalar>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    gy: &Tensor<E>,
    need_da: bool,
    need_db: bool,
) -> (Option<Tensor<E>>, Option<Tensor<E>>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let da = need_da.then(|| {
        let mut da = vec![E::zero(); m * k];
        // da = gy (m x n) . b^T (n x k)
        E::gemm_strided(
            m, n, k, E::one(),
            gy.data(), n as isize, 1,
            b.data(), 1, n as isize,
            E::zero(),
            &mut da, k as isize, 1,
        );
        Tensor::new(vec![m, k], da)
    });
    let db = need_db.then(|| {
        let mut db = vec![E::zero(); k * n];
        // db = a^T (k x m) . gy (m x n)
        E::gemm_strided(
            k, m, n, E::one(),
            a.data(), 1, k as isize,
            gy.data(), n as isize, 1,
            E::zero(),
            &mut db, n as isize, 1,
        );
        Tensor::new(vec![k, n], db)
    });
    (da, db)
}

/// `[B, P, C] x [P, C, D] + [P, D] -> [B, P, D]`.
pub fn part_linear_forward<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>, bias: &Tensor<E>) -> Tensor<E> {
    let (b, p, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = w.shape()[2];
    let mut out = vec![E::zero(); b * p * d];
    for part in 0..p {
        E::gemm_strided(
            b, c, d, E::one(),
            &x.data()[part * c..], (p * c) as isize, 1,
            &w.data()[part * c * d..part * c * d + c * d], d as isize, 1,
            E::zero(),
            &mut out[part * d..], (p * d) as isize, 1,
        );
    }
    for bi in 0..b {
        for part in 0..p {
            let row = &mut out[(bi * p + part) * d..][..d];
            for (o, &v) in row.iter_mut().zip(&bias.data()[part * d..(part + 1) * d]) {
                *o += v;
            }
        }
    }
    Tensor::new(vec![b, p, d], out)
}

pub fn part_linear_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gy: &Tensor<E>,
    need_dx: bool,
) -> (Option<Tensor<E>>, Tensor<E>, Tensor<E>) {
    let (b, p, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = w.shape()[2];

    let dx = need_dx.then(|| {
        let mut dx = vec![E::zero(); b * p * c];
        for part in 0..p {
            // dx[:,part,:] = gy[:,part,:] (B x D) . w[part]^T (D x C)
            E::gemm_strided(
                b, d, c, E::one(),
                &gy.data()[part * d..], (p * d) as isize, 1,
                &w.data()[part * c * d..part * c * d + c * d], 1, d as isize,
                E::zero(),
                &mut dx[part * c..], (p * c) as isize, 1,
            );
        }
        Tensor::new(vec![b, p, c], dx)
    });

    let mut dw = vec![E::zero(); p * c * d];
    for part in 0..p {
        // dw[part] = x[:,part,:]^T (C x B) . gy[:,part,:] (B x D)
        E::gemm_strided(
            c, b, d, E::one(),
            &x.data()[part * c..], 1, (p * c) as isize,
            &gy.data()[part * d..], (p * d) as isize, 1,
            E::zero(),
            &mut dw[part * c * d..part * c * d + c * d], d as isize, 1,
        );
    }

    let mut db = vec![E::zero(); p * d];
    for bi in 0..b {
        for part in 0..p {
            let row = &gy.data()[(bi * p + part) * d..][..d];
            for (o, &g) in db[part * d..(part + 1) * d].iter_mut().zip(row) {
                *o += g;
            }
        }
    }

    (dx, Tensor::new(vec![p, c, d], dw), Tensor::new(vec![p, d], db))
}

/// `[B, P, D] x [P, K, D] -> [B, P, K]`: bias-free inner products against
/// per-class weight rows, independently per part.
pub fn part_classifier_forward<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>) -> Tensor<E> {
    let (b, p, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];
    let mut out = vec![E::zero(); b * p * k];
    for part in 0..p {
        // y[:,part,:] = x[:,part,:] (B x D) . w[part]^T (D x K)
        E::gemm_strided(
            b, d, k, E::one(),
            &x.data()[part * d..], (p * d) as isize, 1,
            &w.data()[part * k * d..part * k * d + k * d], 1, d as isize,
            E::zero(),
            &mut out[part * k..], (p * k) as isize, 1,
        );
    }
    Tensor::new(vec![b, p, k], out)
}

pub fn part_classifier_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gy: &Tensor<E>,
    need_dx: bool,
) -> (Option<Tensor<E>>, Tensor<E>) {
    let (b, p, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];

    let dx = need_dx.then(|| {
        let mut dx = vec![E::zero(); b * p * d];
        for part in 0..p {
            // dx[:,part,:] = gy[:,part,:] (B x K) . w[part] (K x D)
            E::gemm_strided(
                b, k, d, E::one(),
                &gy.data()[part * k..], (p * k) as isize, 1,
                &w.data()[part * k * d..part * k * d + k * d], d as isize, 1,
                E::zero(),
                &mut dx[part * d..], (p * d) as isize, 1,
            );
        }
        Tensor::new(vec![b, p, d], dx)
    });

    let mut dw = vec![E::zero(); p * k * d];
    for part in 0..p {
        // dw[part] = gy[:,part,:]^T (K x B) . x[:,part,:] (B x D)
        E::gemm_strided(
            k, b, d, E::one(),
            &gy.data()[part * k..], 1, (p * k) as isize,
            &x.data()[part * d..], (p * d) as isize, 1,
            E::zero(),
            &mut dw[part * k * d..part * k * d + k * d], d as isize, 1,
        );
    }

    (dx, Tensor::new(vec![p, k, d], dw))
}

/// `[A, B, C] -> [A, C, B]` (copying transpose of the trailing axes).
pub fn swap_axes12<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let (a, b, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![E::zero(); a * b * c];
    for ai in 0..a {
        for bi in 0..b {
            for ci in 0..c {
                out[(ai * c + ci) * b + bi] = x.data()[(ai * b + bi) * c + ci];
            }
        }
    }
    Tensor::new(vec![a, c, b], out)
}

/// Mean cross-entropy after a row-wise softmax; returns the loss and the
/// softmax probabilities saved for the backward pass.
pub fn softmax_ce_forward<E: Scalar>(logits: &Tensor<E>, labels: &[usize]) -> (f64, Tensor<E>) {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = vec![E::zero(); n * k];
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(E::neg_infinity(), |m, &v| if v > m { v } else { m });
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v - max).as_f64().exp();
        }
        let out = &mut probs[i * k..(i + 1) * k];
        for (o, &v) in out.iter_mut().zip(row) {
            *o = E::from_f64((v - max).as_f64().exp() / denom);
        }
        loss -= ((row[labels[i]] - max).as_f64() - denom.ln()) / n as f64;
    }
    (loss, Tensor::new(vec![n, k], probs))
}
