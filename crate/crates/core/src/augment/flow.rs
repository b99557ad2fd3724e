//! Coarse-to-fine optical flow and flow-based frame interpolation.
//!
//! Flow is solved on luma with a linearized brightness-constancy data term
//! and a quadratic smoothness term (Horn–Schunck style). Each pyramid level
//! re-warps the second frame by the current estimate `iterations` times and
//! refines the estimate with a fixed number of Jacobi sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::{Image, Plane};
use crate::scalar::{lit, Real};

/// Jacobi sweeps per warp.
const SWEEPS: usize = 20;
/// Forward-backward mismatch (pixels) at which confidence drops to e^{-1/2}.
const CONSISTENCY_SIGMA: f64 = 1.0;
/// Coarsest pyramid level is never smaller than this.
const MIN_LEVEL_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub levels: usize,
    pub iterations: usize,
    pub smoothness: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { levels: 4, iterations: 10, smoothness: 0.1 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.iterations == 0 {
            return Err(invalid("flow levels and iterations must be positive"));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(invalid(format!("flow smoothness must be positive, got {}", self.smoothness)));
        }
        Ok(())
    }
}

/// Per-pixel displacement in pixels plus a confidence in `[0, 1]`.
/// Pixel `p` of the source frame corresponds to `p + (u, v)` in the other.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    pub u: Plane<T>,
    pub v: Plane<T>,
    pub confidence: Plane<T>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { u: Plane::new(width, height), v: Plane::new(width, height), confidence: Plane::filled(width, height, T::one()) }
    }

    pub fn width(&self) -> usize {
        self.u.width
    }

    pub fn height(&self) -> usize {
        self.u.height
    }
}

fn downsample<T: Real>(p: &Plane<T>) -> Plane<T> {
    let (w, h) = (p.width / 2, p.height / 2);
    let q = lit::<T>(0.25);
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = q * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) + p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
        }
    }
    out
}

/// Resamples a coarse flow component onto a finer grid, scaling magnitudes.
fn upsample_flow<T: Real>(c: &Plane<T>, width: usize, height: usize) -> Plane<T> {
    let sx = c.width as f64 / width as f64;
    let sy = c.height as f64 / height as f64;
    let gain = lit::<T>(width as f64 / c.width as f64);
    let mut out = Plane::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let cx = lit::<T>((x as f64 + 0.5) * sx - 0.5);
            let cy = lit::<T>((y as f64 + 0.5) * sy - 0.5);
            out.data[y * width + x] = gain * c.bilinear(cx, cy);
        }
    }
    out
}

fn gradients<T: Real>(p: &Plane<T>) -> (Plane<T>, Plane<T>) {
    let (w, h) = (p.width, p.height);
    let mut gx = Plane::new(w, h);
    let mut gy = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let dx = lit::<T>((xr - xl).max(1) as f64);
            let dy = lit::<T>((yd - yu).max(1) as f64);
            gx.data[y * w + x] = (p.at(xr, y) - p.at(xl, y)) / dx;
            gy.data[y * w + x] = (p.at(x, yd) - p.at(x, yu)) / dy;
        }
    }
    (gx, gy)
}

fn neighbour_mean<T: Real>(p: &Plane<T>, x: usize, y: usize) -> T {
    let (w, h) = (p.width, p.height);
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    let yu = y.saturating_sub(1);
    let yd = (y + 1).min(h - 1);
    lit::<T>(0.25) * (p.at(xl, y) + p.at(xr, y) + p.at(x, yu) + p.at(x, yd))
}

fn warp<T: Real>(p: &Plane<T>, u: &Plane<T>, v: &Plane<T>) -> Plane<T> {
    let mut out = Plane::new(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let i = y * p.width + x;
            out.data[i] = p.bilinear(lit::<T>(x as f64) + u.data[i], lit::<T>(y as f64) + v.data[i]);
        }
    }
    out
}

/// One pyramid level: refines `(u, v)` in place.
fn refine<T: Real>(f0: &Plane<T>, f1: &Plane<T>, u: &mut Plane<T>, v: &mut Plane<T>, params: &FlowParams) {
    let alpha = lit::<T>(params.smoothness);
    let (g0x, g0y) = gradients(f0);
    let half = lit::<T>(0.5);
    for _ in 0..params.iterations {
        let warped = warp(f1, u, v);
        let (gwx, gwy) = gradients(&warped);
        let n = u.data.len();
        let ix: Vec<T> = (0..n).map(|i| half * (g0x.data[i] + gwx.data[i])).collect();
        let iy: Vec<T> = (0..n).map(|i| half * (g0y.data[i] + gwy.data[i])).collect();
        let it: Vec<T> = (0..n).map(|i| warped.data[i] - f0.data[i]).collect();
        let (u0, v0) = (u.clone(), v.clone());
        for _ in 0..SWEEPS {
            let (pu, pv) = (u.clone(), v.clone());
            for y in 0..u.height {
                for x in 0..u.width {
                    let i = y * u.width + x;
                    let ub = neighbour_mean(&pu, x, y);
                    let vb = neighbour_mean(&pv, x, y);
                    let r = ix[i] * (ub - u0.data[i]) + iy[i] * (vb - v0.data[i]) + it[i];
                    let d = alpha + ix[i] * ix[i] + iy[i] * iy[i];
                    u.data[i] = ub - ix[i] * r / d;
                    v.data[i] = vb - iy[i] * r / d;
                }
            }
        }
    }
}

/// Flow from `f0` to `f1` without confidence.
fn one_way<T: Real>(f0: &Image<T>, f1: &Image<T>, params: &FlowParams) -> (Plane<T>, Plane<T>) {
    let mut p0 = vec![f0.luma()];
    let mut p1 = vec![f1.luma()];
    while p0.len() < params.levels {
        let last = p0.last().expect("non-empty");
        if last.width / 2 < MIN_LEVEL_SIZE || last.height / 2 < MIN_LEVEL_SIZE {
            break;
        }
        let d0 = downsample(last);
        let d1 = downsample(p1.last().expect("non-empty"));
        p0.push(d0);
        p1.push(d1);
    }
    let coarsest = p0.last().expect("non-empty");
    let mut u = Plane::new(coarsest.width, coarsest.height);
    let mut v = Plane::new(coarsest.width, coarsest.height);
    for level in (0..p0.len()).rev() {
        let (a, b) = (&p0[level], &p1[level]);
        if u.width != a.width || u.height != a.height {
            u = upsample_flow(&u, a.width, a.height);
            v = upsample_flow(&v, a.width, a.height);
        }
        refine(a, b, &mut u, &mut v, params);
    }
    (u, v)
}

/// Confidence of `(u, v)` from its round trip through the reverse flow.
fn consistency<T: Real>(u: &Plane<T>, v: &Plane<T>, ru: &Plane<T>, rv: &Plane<T>) -> Plane<T> {
    let k = lit::<T>(-0.5 / (CONSISTENCY_SIGMA * CONSISTENCY_SIGMA));
    let mut c = Plane::new(u.width, u.height);
    for y in 0..u.height {
        for x in 0..u.width {
            let i = y * u.width + x;
            let (px, py) = (lit::<T>(x as f64) + u.data[i], lit::<T>(y as f64) + v.data[i]);
            let ex = u.data[i] + ru.bilinear(px, py);
            let ey = v.data[i] + rv.bilinear(px, py);
            c.data[i] = (k * (ex * ex + ey * ey)).exp();
        }
    }
    c
}

/// Forward (`f0 → f1`) and backward (`f1 → f0`) flow with forward-backward
/// consistency as confidence.
pub fn estimate_flow<T: Real>(f0: &Image<T>, f1: &Image<T>, params: &FlowParams) -> Result<(FlowField<T>, FlowField<T>)> {
    if !f0.same_shape(f1) {
        return Err(invalid(format!("flow frames differ in size: {}×{} vs {}×{}", f0.width, f0.height, f1.width, f1.height)));
    }
    params.validate()?;
    let (fu, fv) = one_way(f0, f1, params);
    let (bu, bv) = one_way(f1, f0, params);
    let fc = consistency(&fu, &fv, &bu, &bv);
    let bc = consistency(&bu, &bv, &fu, &fv);
    Ok((FlowField { u: fu, v: fv, confidence: fc }, FlowField { u: bu, v: bv, confidence: bc }))
}

/// Bilinear RGB sample at integer-centred coordinates; `None` when the
/// position lies more than half a pixel outside the frame.
fn sample<T: Real>(img: &Image<T>, x: T, y: T) -> Option<[T; 3]> {
    let half = lit::<T>(0.5);
    if x < -half || y < -half || x > lit::<T>(img.width as f64) - half || y > lit::<T>(img.height as f64) - half {
        return None;
    }
    let x = x.max(T::zero()).min(lit((img.width - 1) as f64));
    let y = y.max(T::zero()).min(lit((img.height - 1) as f64));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let xi = x0.to_usize().unwrap_or(0);
    let yi = y0.to_usize().unwrap_or(0);
    let xj = (xi + 1).min(img.width - 1);
    let yj = (yi + 1).min(img.height - 1);
    let (a, b, c, d) = (img.pixel(xi, yi), img.pixel(xj, yi), img.pixel(xi, yj), img.pixel(xj, yj));
    let one = T::one();
    let mut out = [T::zero(); 3];
    for k in 0..3 {
        out[k] = (one - fy) * ((one - fx) * a[k] + fx * b[k]) + fy * ((one - fx) * c[k] + fx * d[k]);
    }
    Some(out)
}

/// Synthesizes the frame at time `t ∈ (0, 1)` between `f0` and `f1`.
///
/// `forward` is the `f0 → f1` flow and `backward` the `f1 → f0` flow, both
/// from [`estimate_flow`]. Each side is backward-warped along its scaled
/// flow and the two are blended with weights `(1 − t, t)` times their
/// confidences; a side that warps out of the frame contributes nothing.
pub fn interpolate_frame<T: Real>(f0: &Image<T>, f1: &Image<T>, t: f64, forward: &FlowField<T>, backward: &FlowField<T>) -> Result<Image<T>> {
    if !(t > 0.0 && t < 1.0) {
        return Err(invalid(format!("interpolation time must lie in (0, 1), got {t}")));
    }
    if !f0.same_shape(f1) {
        return Err(invalid("interpolation endpoints differ in size"));
    }
    for f in [forward, backward] {
        if f.width() != f0.width || f.height() != f0.height {
            return Err(invalid("flow field does not match the frame size"));
        }
    }
    let tt = lit::<T>(t);
    let one = T::one();
    let floor = lit::<T>(1e-6);
    let mut out = Image::new(f0.width, f0.height);
    for y in 0..f0.height {
        for x in 0..f0.width {
            let i = y * f0.width + x;
            let (xf, yf) = (lit::<T>(x as f64), lit::<T>(y as f64));
            let s = one - tt;
            let a = sample(f0, xf + tt * backward.u.data[i], yf + tt * backward.v.data[i]);
            let b = sample(f1, xf + s * forward.u.data[i], yf + s * forward.v.data[i]);
            let px = match (a, b) {
                (Some(a), Some(b)) => {
                    let mut w0 = s * backward.confidence.data[i];
                    let mut w1 = tt * forward.confidence.data[i];
                    if w0 + w1 < floor {
                        w0 = s;
                        w1 = tt;
                    }
                    let w = w1 / (w0 + w1);
                    [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])]
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    let (a, b) = (f0.pixel(x, y), f1.pixel(x, y));
                    [a[0] + tt * (b[0] - a[0]), a[1] + tt * (b[1] - a[1]), a[2] + tt * (b[2] - a[2])]
                }
            };
            out.set_pixel(x, y, px);
        }
    }
    Ok(out)
}
