//! Pedestrian-centering frame normalization.
//!
//! The usual gait-silhouette recipe: crop to the vertical extent of the
//! foreground, rescale that band to the target height preserving aspect,
//! then cut a fixed-width window horizontally centered on the foreground
//! centroid, padding with background where the window leaves the image.
//! Frames with no foreground at all skip the crop and are scaled whole.
//!
//! Output pixels are quantized to 8-bit levels so that saving and reloading
//! a normalized frame reproduces it exactly.

use super::{SilhouetteFrame, FRAME_H, FRAME_W};

/// Rows spanned by foreground (any pixel > 0), inclusive.
fn foreground_rows(frame: &SilhouetteFrame) -> Option<(usize, usize)> {
    let mut top = None;
    let mut bottom = None;
    for y in 0..frame.h {
        let row = &frame.pixels[y * frame.w..(y + 1) * frame.w];
        if row.iter().any(|&p| p > 0.0) {
            if top.is_none() {
                top = Some(y);
            }
            bottom = Some(y);
        }
    }
    Some((top?, bottom?))
}

/// Bilinear resample of a `src_h x src_w` region to `dst_h x dst_w`.
fn resize_bilinear(
    pixels: &[f32],
    src_w: usize,
    src_h: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; dst_h * dst_w];
    let sy = src_h as f32 / dst_h as f32;
    let sx = src_w as f32 / dst_w as f32;
    for y in 0..dst_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, src_h as f32 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f32;
        for x in 0..dst_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, src_w as f32 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f32;
            let p00 = pixels[y0 * src_w + x0];
            let p01 = pixels[y0 * src_w + x1];
            let p10 = pixels[y1 * src_w + x0];
            let p11 = pixels[y1 * src_w + x1];
            out[y * dst_w + x] =
                p00 * (1.0 - wy) * (1.0 - wx) + p01 * (1.0 - wy) * wx + p10 * wy * (1.0 - wx) + p11 * wy * wx;
        }
    }
    out
}

/// Normalizes an arbitrary grayscale frame to the 64x44 contract.
pub fn normalize_frame(raw: &SilhouetteFrame) -> SilhouetteFrame {
    // 1. Vertical crop to the foreground box; degenerate frames stay whole.
    let (top, bottom) = foreground_rows(raw).unwrap_or((0, raw.h - 1));
    let band_h = bottom - top + 1;
    let band = &raw.pixels[top * raw.w..(bottom + 1) * raw.w];

    // 2. Scale the band to target height, preserving aspect.
    let scaled_w = ((raw.w as f64 * FRAME_H as f64 / band_h as f64).round() as usize).max(1);
    let scaled = if band_h == FRAME_H && scaled_w == raw.w {
        band.to_vec()
    } else {
        resize_bilinear(band, raw.w, band_h, FRAME_H, scaled_w)
    };

    // 3. Horizontal window centered on the foreground centroid.
    let mut mass = 0.0f64;
    let mut moment = 0.0f64;
    for y in 0..FRAME_H {
        for x in 0..scaled_w {
            let p = scaled[y * scaled_w + x] as f64;
            mass += p;
            moment += p * x as f64;
        }
    }
    let centroid = if mass > 0.0 { moment / mass } else { scaled_w as f64 / 2.0 };
    let offset = (centroid + 0.5).floor() as isize - (FRAME_W / 2) as isize;

    let mut out = vec![0.0f32; FRAME_H * FRAME_W];
    for y in 0..FRAME_H {
        for x in 0..FRAME_W {
            let sx = offset + x as isize;
            if sx >= 0 && (sx as usize) < scaled_w {
                out[y * FRAME_W + x] = scaled[y * scaled_w + sx as usize];
            }
        }
    }

    // 4. Quantize to 8-bit levels so disk round-trips are exact.
    for p in out.iter_mut() {
        *p = (*p * 255.0).round() / 255.0;
    }
    SilhouetteFrame::new(FRAME_H, FRAME_W, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_is_centered_and_fills_height() {
        // A 20x30 blob in a 128x88 frame, off to one side.
        let mut raw = SilhouetteFrame::zeros(128, 88);
        for y in 40..100 {
            for x in 10..30 {
                raw.pixels[y * 88 + x] = 1.0;
            }
        }
        let norm = normalize_frame(&raw);
        assert_eq!((norm.h, norm.w), (FRAME_H, FRAME_W));
        // foreground must now span the full height
        let fg_rows: Vec<usize> = (0..FRAME_H)
            .filter(|&y| norm.pixels[y * FRAME_W..(y + 1) * FRAME_W].iter().any(|&p| p > 0.0))
            .collect();
        assert_eq!(fg_rows[0], 0);
        assert_eq!(*fg_rows.last().unwrap(), FRAME_H - 1);
        // and the centroid must sit near the middle column
        let mut mass = 0.0;
        let mut moment = 0.0;
        for y in 0..FRAME_H {
            for x in 0..FRAME_W {
                let p = norm.pixels[y * FRAME_W + x] as f64;
                mass += p;
                moment += p * x as f64;
            }
        }
        let centroid = moment / mass;
        assert!((centroid - FRAME_W as f64 / 2.0).abs() < 1.5, "centroid {centroid}");
    }

    #[test]
    fn normalization_is_deterministic() {
        let mut raw = SilhouetteFrame::zeros(100, 60);
        for y in 20..90 {
            for x in 25..40 {
                raw.pixels[y * 60 + x] = 0.8;
            }
        }
        assert_eq!(normalize_frame(&raw), normalize_frame(&raw));
    }

    #[test]
    fn normalization_is_idempotent_on_own_output() {
        let mut raw = SilhouetteFrame::zeros(128, 88);
        for y in 13..113 {
            for x in 30..55 {
                raw.pixels[y * 88 + x] = 1.0;
            }
        }
        let once = normalize_frame(&raw);
        let twice = normalize_frame(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_frame_scales_without_crop() {
        let raw = SilhouetteFrame::zeros(100, 60);
        let norm = normalize_frame(&raw);
        assert_eq!((norm.h, norm.w), (FRAME_H, FRAME_W));
        assert!(norm.pixels.iter().all(|&p| p == 0.0));
    }
}
