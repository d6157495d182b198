//! Single-stage 2-D Haar discrete wavelet transform and its exact inverse.
//!
//! Uses the unnormalized sum/difference filter pair (low = a + b, high = a - b)
//! applied along width then height, so each 2x2 block `[[a, b], [c, d]]` maps to
//!
//! ```text
//! LL = a + b + c + d        LH = (a - b) + (c - d)
//! HL = (a + b) - (c + d)    HH = (a - b) - (c - d)
//! ```
//!
//! No `1/sqrt(2)` scaling is applied; any fixed gain is absorbed by the learned
//! recovery convolution that follows in the downsampling layer. The transform is
//! exactly invertible, and satisfies the energy identity
//! `4 * sum(x^2) = sum(LL^2) + sum(LH^2) + sum(HL^2) + sum(HH^2)`.

use thiserror::Error;

use crate::tensor::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HaarError {
    #[error("spatial dimensions must be even, got {h}x{w}")]
    OddDimension { h: usize, w: usize },
    #[error("subband shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// The four half-resolution subbands of one transformed plane.
///
/// `h` and `w` are the subband dimensions; the source plane was `2h x 2w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands<E> {
    pub h: usize,
    pub w: usize,
    pub ll: Vec<E>,
    pub lh: Vec<E>,
    pub hl: Vec<E>,
    pub hh: Vec<E>,
}

impl<E> Subbands<E> {
    fn check(&self) -> Result<(), HaarError> {
        let n = self.h * self.w;
        for (name, band) in [("ll", &self.ll), ("lh", &self.lh), ("hl", &self.hl), ("hh", &self.hh)] {
            if band.len() != n {
                return Err(HaarError::ShapeMismatch(format!(
                    "{name} has {} elements, expected {}x{}",
                    band.len(),
                    self.h,
                    self.w
                )));
            }
        }
        Ok(())
    }
}

/// Forward transform of one `h x w` row-major plane. `h` and `w` must be even.
pub fn dwt2<E: Scalar>(plane: &[E], h: usize, w: usize) -> Result<Subbands<E>, HaarError> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(HaarError::OddDimension { h, w });
    }
    if plane.len() != h * w {
        return Err(HaarError::ShapeMismatch(format!("plane has {} elements, expected {h}x{w}", plane.len())));
    }
    let (hh2, wh2) = (h / 2, w / 2);
    let n = hh2 * wh2;
    let mut sub = Subbands {
        h: hh2,
        w: wh2,
        ll: vec![E::zero(); n],
        lh: vec![E::zero(); n],
        hl: vec![E::zero(); n],
        hh: vec![E::zero(); n],
    };
    dwt2_into(plane, h, w, &mut sub.ll, &mut sub.lh, &mut sub.hl, &mut sub.hh);
    Ok(sub)
}

/// Forward transform writing into caller-provided subband buffers of length `(h/2)*(w/2)`.
///
/// Dimensions must already be validated even.
pub(crate) fn dwt2_into<E: Scalar>(
    plane: &[E],
    h: usize,
    w: usize,
    ll: &mut [E],
    lh: &mut [E],
    hl: &mut [E],
    hh: &mut [E],
) {
    let wh2 = w / 2;
    for by in 0..h / 2 {
        let top = &plane[2 * by * w..2 * by * w + w];
        let bot = &plane[(2 * by + 1) * w..(2 * by + 1) * w + w];
        let row = by * wh2;
        for bx in 0..wh2 {
            let (a, b) = (top[2 * bx], top[2 * bx + 1]);
            let (c, d) = (bot[2 * bx], bot[2 * bx + 1]);
            let (low_t, high_t) = (a + b, a - b);
            let (low_b, high_b) = (c + d, c - d);
            ll[row + bx] = low_t + low_b;
            lh[row + bx] = high_t + high_b;
            hl[row + bx] = low_t - low_b;
            hh[row + bx] = high_t - high_b;
        }
    }
}

/// Exact inverse; reconstructs the `2h x 2w` plane.
pub fn idwt2<E: Scalar>(sub: &Subbands<E>) -> Result<Vec<E>, HaarError> {
    sub.check()?;
    let (h, w) = (sub.h * 2, sub.w * 2);
    let mut plane = vec![E::zero(); h * w];
    idwt2_into(sub, &mut plane);
    Ok(plane)
}

pub(crate) fn idwt2_into<E: Scalar>(sub: &Subbands<E>, plane: &mut [E]) {
    recombine_into(&sub.ll, &sub.lh, &sub.hl, &sub.hh, sub.h, sub.w, E::from_f64(0.25), plane);
}

/// Shared kernel for the inverse (scale 1/4) and the transform adjoint
/// (scale 1, used by backpropagation through the downsampling layer).
pub(crate) fn recombine_into<E: Scalar>(
    ll: &[E],
    lh: &[E],
    hl: &[E],
    hh: &[E],
    h2: usize,
    w2: usize,
    scale: E,
    plane: &mut [E],
) {
    let w = w2 * 2;
    for by in 0..h2 {
        let row = by * w2;
        for bx in 0..w2 {
            let (ll_v, lh_v) = (ll[row + bx], lh[row + bx]);
            let (hl_v, hh_v) = (hl[row + bx], hh[row + bx]);
            let a = (ll_v + lh_v + hl_v + hh_v) * scale;
            let b = (ll_v - lh_v + hl_v - hh_v) * scale;
            let c = (ll_v + lh_v - hl_v - hh_v) * scale;
            let d = (ll_v - lh_v - hl_v + hh_v) * scale;
            plane[2 * by * w + 2 * bx] = a;
            plane[2 * by * w + 2 * bx + 1] = b;
            plane[(2 * by + 1) * w + 2 * bx] = c;
            plane[(2 * by + 1) * w + 2 * bx + 1] = d;
        }
    }
}

/// Result of one round-trip/energy check over random planes.
#[derive(Debug, Clone, Copy)]
pub struct DwtCheck {
    pub max_roundtrip_err: f64,
    pub max_energy_rel_err: f64,
}

/// Runs `trials` random round-trips at the given size and reports worst-case errors.
///
/// Round-trip error is absolute; energy error is relative to the input energy.
pub fn roundtrip_check(h: usize, w: usize, trials: usize, rng: &mut impl rand::Rng) -> DwtCheck {
    let mut max_rt = 0.0f64;
    let mut max_en = 0.0f64;
    for _ in 0..trials {
        let plane: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let sub = dwt2(&plane, h, w).expect("even dims");
        let back = idwt2(&sub).expect("consistent subbands");
        for (x, y) in plane.iter().zip(&back) {
            max_rt = max_rt.max((x - y).abs() as f64);
        }
        let energy_in: f64 = plane.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() * 4.0;
        let energy_out: f64 = [&sub.ll, &sub.lh, &sub.hl, &sub.hh]
            .iter()
            .flat_map(|band| band.iter())
            .map(|&x| (x as f64) * (x as f64))
            .sum();
        if energy_in > 0.0 {
            max_en = max_en.max(((energy_in - energy_out) / energy_in).abs());
        }
    }
    DwtCheck { max_roundtrip_err: max_rt, max_energy_rel_err: max_en }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn two_by_two_block() {
        let sub = dwt2(&[1.0f32, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(sub.ll, vec![10.0]);
        assert_eq!(sub.lh, vec![-2.0]);
        assert_eq!(sub.hl, vec![-4.0]);
        assert_eq!(sub.hh, vec![0.0]);
    }

    #[test]
    fn inverse_of_stated_block() {
        let sub = Subbands { h: 1, w: 1, ll: vec![10.0f32], lh: vec![-2.0], hl: vec![-4.0], hh: vec![0.0] };
        assert_eq!(idwt2(&sub).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_image_has_zero_detail() {
        let v = 0.7f32;
        let plane = vec![v; 6 * 4];
        let sub = dwt2(&plane, 6, 4).unwrap();
        assert!(sub.ll.iter().all(|&x| (x - 4.0 * v).abs() < 1e-6));
        assert!(sub.lh.iter().chain(&sub.hl).chain(&sub.hh).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_subbands_give_zero_image() {
        let sub = Subbands { h: 2, w: 3, ll: vec![0.0f32; 6], lh: vec![0.0; 6], hl: vec![0.0; 6], hh: vec![0.0; 6] };
        assert!(idwt2(&sub).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert_eq!(dwt2(&[0.0f32; 15], 5, 3).unwrap_err(), HaarError::OddDimension { h: 5, w: 3 });
        assert_eq!(dwt2(&[0.0f32; 18], 6, 3).unwrap_err(), HaarError::OddDimension { h: 6, w: 3 });
    }

    #[test]
    fn subband_shape_mismatch_rejected() {
        let sub = Subbands { h: 2, w: 2, ll: vec![0.0f32; 3], lh: vec![0.0; 4], hl: vec![0.0; 4], hh: vec![0.0; 4] };
        assert!(matches!(idwt2(&sub).unwrap_err(), HaarError::ShapeMismatch(_)));
    }

    #[test]
    fn roundtrip_on_image_sized_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let check = roundtrip_check(64, 44, 100, &mut rng);
        assert!(check.max_roundtrip_err < 1e-6, "round-trip err {}", check.max_roundtrip_err);
        assert!(check.max_energy_rel_err < 1e-4, "energy err {}", check.max_energy_rel_err);
    }

    proptest! {
        #[test]
        fn dwt_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 24),
            ys in proptest::collection::vec(-10.0f64..10.0, 24),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| alpha * x + beta * y).collect();
            let sx = dwt2(&xs, 4, 6).unwrap();
            let sy = dwt2(&ys, 4, 6).unwrap();
            let sc = dwt2(&combo, 4, 6).unwrap();
            for ((bx, by), bc) in [(&sx.ll, &sy.ll), (&sx.lh, &sy.lh), (&sx.hl, &sy.hl), (&sx.hh, &sy.hh)]
                .into_iter()
                .zip([&sc.ll, &sc.lh, &sc.hl, &sc.hh])
            {
                for ((x, y), c) in bx.iter().zip(by).zip(bc) {
                    prop_assert!((alpha * x + beta * y - c).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn roundtrip_is_exact_in_f64(xs in proptest::collection::vec(-100.0f64..100.0, 48)) {
            let sub = dwt2(&xs, 6, 8).unwrap();
            let back = idwt2(&sub).unwrap();
            for (x, y) in xs.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
