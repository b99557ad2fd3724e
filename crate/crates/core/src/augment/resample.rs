//! Separable bicubic resampling (Keys kernel, a = −0.5).
//!
//! Pixel centres sit at half-integers, so source coordinate
//! `(d + 0.5)·(src/dst) − 0.5` maps onto destination pixel `d`. When
//! shrinking, the kernel is widened by the reduction ratio so it acts as a
//! low-pass filter. Borders clamp.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scalar::{lit, Real};

const KEYS_A: f64 = -0.5;

fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Taps for one output coordinate: first source index and normalized weights.
struct Taps<T> {
    start: Vec<usize>,
    len: usize,
    weights: Vec<T>,
}

fn taps<T: Real>(src: usize, dst: usize) -> Taps<T> {
    let ratio = src as f64 / dst as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    let len = (2.0 * support).ceil() as usize + 1;
    let mut start = Vec::with_capacity(dst);
    let mut weights = Vec::with_capacity(dst * len);
    for d in 0..dst {
        let centre = (d as f64 + 0.5) * ratio - 0.5;
        let first = (centre - support).floor() as isize + 1;
        let mut raw: Vec<(isize, f64)> = (0..len as isize)
            .map(|k| {
                let s = first + k;
                (s, keys((s as f64 - centre) / stretch))
            })
            .collect();
        let sum: f64 = raw.iter().map(|(_, w)| w).sum();
        for r in &mut raw {
            r.1 /= sum;
        }
        // Fold out-of-range taps onto the border pixels so every window has
        // the same length and starts in range.
        let lo = first.clamp(0, src as isize - 1) as usize;
        let lo = lo.min(src.saturating_sub(len));
        let mut folded = vec![0.0; len];
        for (s, w) in raw {
            let s = s.clamp(0, src as isize - 1) as usize;
            let k = s.saturating_sub(lo).min(len - 1);
            folded[k] += w;
        }
        start.push(lo);
        weights.extend(folded.into_iter().map(lit::<T>));
    }
    Taps { start, len, weights }
}

/// Resamples to `width × height`. No clamping of the result.
pub fn resize_bicubic<T: Real>(img: &Image<T>, width: usize, height: usize) -> Result<Image<T>> {
    if width == 0 || height == 0 || img.width == 0 || img.height == 0 {
        return Err(invalid("resize to or from an empty image"));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let tx = taps::<T>(img.width, width);
    let ty = taps::<T>(img.height, height);
    // Horizontal pass.
    let mut mid = vec![T::zero(); width * img.height * 3];
    for y in 0..img.height {
        let row = &img.data[y * img.width * 3..(y + 1) * img.width * 3];
        for x in 0..width {
            let s0 = tx.start[x];
            let ws = &tx.weights[x * tx.len..(x + 1) * tx.len];
            let mut acc = [T::zero(); 3];
            for (k, w) in ws.iter().enumerate() {
                let s = (s0 + k).min(img.width - 1);
                for c in 0..3 {
                    acc[c] += *w * row[s * 3 + c];
                }
            }
            mid[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    // Vertical pass.
    let mut out = Image::new(width, height);
    for y in 0..height {
        let s0 = ty.start[y];
        let ws = &ty.weights[y * ty.len..(y + 1) * ty.len];
        for (k, w) in ws.iter().enumerate() {
            let s = (s0 + k).min(img.height - 1);
            let src = &mid[s * width * 3..(s + 1) * width * 3];
            let dst = &mut out.data[y * width * 3..(y + 1) * width * 3];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += *w * *v;
            }
        }
    }
    Ok(out)
}

/// Upsamples a square frame by `factor`, resizes it to `target × target`
/// and clamps to `[0, 1]`.
pub fn upsample_resize<T: Real>(frame: &Image<T>, factor: usize, target: usize) -> Result<Image<T>> {
    if frame.width != frame.height {
        return Err(invalid(format!("upsample_resize needs a square frame, got {}×{}", frame.width, frame.height)));
    }
    if factor == 0 || target == 0 {
        return Err(invalid("upsampling factor and target size must be positive"));
    }
    let up = resize_bicubic(frame, frame.width * factor, frame.height * factor)?;
    let mut out = resize_bicubic(&up, target, target)?;
    out.clamp01();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(n: usize) -> Image<f64> {
        let k = 2.0 * std::f64::consts::PI / n as f64;
        Image::from_fn(n, n, |x, y| {
            let (x, y) = (x as f64, y as f64);
            [0.5 + 0.3 * (k * x).sin() * (k * y).cos(), 0.5 + 0.25 * (2.0 * k * y).sin(), 0.4 + 0.2 * (k * (x + y)).cos()]
        })
    }

    #[test]
    fn kernel_shape() {
        assert_eq!(keys(0.0), 1.0);
        assert_eq!(keys(1.0), 0.0);
        assert_eq!(keys(2.0), 0.0);
        // Partition of unity at any phase.
        for f in [0.0, 0.1, 0.37, 0.5] {
            let s: f64 = (-2..=2).map(|k| keys(k as f64 + f)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_frames_stay_constant() {
        let img = Image::<f64>::filled(24, 24, [0.2, 0.7, 1.0]);
        let out = upsample_resize(&img, 4, 37).unwrap();
        assert_eq!((out.width, out.height), (37, 37));
        assert!(out.data.chunks(3).all(|p| (p[0] - 0.2).abs() < 1e-6 && (p[1] - 0.7).abs() < 1e-6 && (p[2] - 1.0).abs() < 1e-6));
    }

    #[test]
    fn round_trip_on_smooth_images() {
        let img = smooth(48);
        let up = resize_bicubic(&img, 192, 192).unwrap();
        let back = resize_bicubic(&up, 48, 48).unwrap();
        let mae: f64 = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / img.data.len() as f64;
        assert!(mae < 0.02, "mae {mae}");
    }

    #[test]
    fn rejects_non_square() {
        assert!(upsample_resize(&Image::<f64>::new(8, 9), 4, 16).is_err());
    }

    #[test]
    fn identity_size_is_a_copy() {
        let img = smooth(16);
        assert_eq!(resize_bicubic(&img, 16, 16).unwrap(), img);
    }
}
