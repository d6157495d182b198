//! Batch normalization with train/eval semantics.
//!
//! Statistics are taken over all non-channel axes. Train mode normalizes by
//! the biased batch variance (eps 1e-5) and updates running statistics with
//! momentum 0.1, storing the unbiased variance, matching the convention of
//! the training stacks this backbone derives from.

use super::{BnSaved, ChannelLayout, Mode};
use crate::tensor::{Scalar, Tensor};

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.1;

pub fn batchnorm_forward<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    layout: ChannelLayout,
    mode: Mode,
    running_mean: &mut Tensor<E>,
    running_var: &mut Tensor<E>,
) -> (Tensor<E>, BnSaved<E>) {
    let ChannelLayout { outer, channels, inner } = layout;
    let n = outer * inner;
    let eps = E::from_f64(EPS);

    let mut xhat = vec![E::zero(); x.numel()];
    let mut invstd = vec![E::zero(); channels];
    let mut y = vec![E::zero(); x.numel()];

    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = E::zero();
                for o in 0..outer {
                    let base = (o * channels + c) * inner;
                    for &v in &x.data()[base..base + inner] {
                        sum += v;
                    }
                }
                let mean = sum / E::from_f64(n as f64);
                let mut sq = E::zero();
                for o in 0..outer {
                    let base = (o * channels + c) * inner;
                    for &v in &x.data()[base..base + inner] {
                        let d = v - mean;
                        sq += d * d;
                    }
                }
                let var = sq / E::from_f64(n as f64);
                let m = E::from_f64(MOMENTUM);
                let keep = E::one() - m;
                let unbiased = if n > 1 { sq / E::from_f64((n - 1) as f64) } else { var };
                running_mean.data_mut()[c] = keep * running_mean.data()[c] + m * mean;
                running_var.data_mut()[c] = keep * running_var.data()[c] + m * unbiased;
                (mean, var)
            }
            Mode::Eval => (running_mean.data()[c], running_var.data()[c]),
        };
        let istd = E::one() / (var + eps).sqrt();
        invstd[c] = istd;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for o in 0..outer {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                let xh = (x.data()[i] - mean) * istd;
                xhat[i] = xh;
                y[i] = g * xh + b;
            }
        }
    }

    (
        Tensor::new(x.shape().to_vec(), y),
        BnSaved { xhat, invstd, layout },
    )
}

pub fn batchnorm_backward<E: Scalar>(
    gamma: &Tensor<E>,
    saved: &BnSaved<E>,
    gy: &Tensor<E>,
    mode: Mode,
    need_dx: bool,
) -> (Option<Tensor<E>>, Tensor<E>, Tensor<E>) {
    let ChannelLayout { outer, channels, inner } = saved.layout;
    let n = outer * inner;
    let n_e = E::from_f64(n as f64);

    let mut dgamma = vec![E::zero(); channels];
    let mut dbeta = vec![E::zero(); channels];
    for c in 0..channels {
        let mut dg = E::zero();
        let mut db = E::zero();
        for o in 0..outer {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                dg += gy.data()[i] * saved.xhat[i];
                db += gy.data()[i];
            }
        }
        dgamma[c] = dg;
        dbeta[c] = db;
    }

    let dx = need_dx.then(|| {
        let mut dx = vec![E::zero(); gy.numel()];
        for c in 0..channels {
            let scale = gamma.data()[c] * saved.invstd[c];
            match mode {
                Mode::Train => {
                    let mean_dy = dbeta[c] / n_e;
                    let mean_dyxhat = dgamma[c] / n_e;
                    for o in 0..outer {
                        let base = (o * channels + c) * inner;
                        for i in base..base + inner {
                            dx[i] = scale * (gy.data()[i] - mean_dy - saved.xhat[i] * mean_dyxhat);
                        }
                    }
                }
                Mode::Eval => {
                    for o in 0..outer {
                        let base = (o * channels + c) * inner;
                        for i in base..base + inner {
                            dx[i] = scale * gy.data()[i];
                        }
                    }
                }
            }
        }
        Tensor::new(gy.shape().to_vec(), dx)
    });

    (
        dx,
        Tensor::new(vec![channels], dgamma),
        Tensor::new(vec![channels], dbeta),
    )
}
