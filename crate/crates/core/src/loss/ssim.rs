//! Structural similarity over 11×11 Gaussian windows (σ = 1.5), averaged
//! over every window position that fits inside the image and over channels.

use crate::error::{invalid, Result};
use crate::image::{Image, Plane};
use crate::scalar::{lit, Real};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D window; the 2-D window is its outer product.
pub fn gaussian_window<T: Real>() -> [T; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    let mut out = [T::zero(); WINDOW];
    for (o, v) in out.iter_mut().zip(raw) {
        *o = lit(v / sum);
    }
    out
}

/// Separable "valid" filtering: output is `(w − 10) × (h − 10)`.
fn filter_valid<T: Real>(p: &Plane<T>, k: &[T; WINDOW]) -> Plane<T> {
    let ow = p.width + 1 - WINDOW;
    let oh = p.height + 1 - WINDOW;
    let mut rows = Plane::new(ow, p.height);
    for y in 0..p.height {
        let src = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, kv) in k.iter().enumerate() {
                acc += *kv * src[x + i];
            }
            rows.data[y * ow + x] = acc;
        }
    }
    let mut out = Plane::new(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, kv) in k.iter().enumerate() {
                acc += *kv * rows.data[(y + i) * ow + x];
            }
            out.data[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a `(w − 10) × (h − 10)` map back onto
/// `w × h`.
fn filter_adjoint<T: Real>(g: &Plane<T>, k: &[T; WINDOW], width: usize, height: usize) -> Plane<T> {
    let ow = g.width;
    let mut cols = Plane::new(ow, height);
    for y in 0..g.height {
        for x in 0..ow {
            let v = g.data[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                cols.data[(y + i) * ow + x] += *kv * v;
            }
        }
    }
    let mut out = Plane::new(width, height);
    for y in 0..height {
        for x in 0..ow {
            let v = cols.data[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out.data[y * width + x + i] += *kv * v;
            }
        }
    }
    out
}

fn check<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<()> {
    if !x.same_shape(y) {
        return Err(invalid(format!("SSIM inputs differ in size: {}×{} vs {}×{}", x.width, x.height, y.width, y.height)));
    }
    if x.width < WINDOW || x.height < WINDOW {
        return Err(invalid(format!("SSIM needs at least {WINDOW}×{WINDOW} pixels, got {}×{}", x.width, x.height)));
    }
    Ok(())
}

struct ChannelStats<T> {
    mu_x: Plane<T>,
    mu_y: Plane<T>,
    sxx: Plane<T>,
    syy: Plane<T>,
    sxy: Plane<T>,
}

fn channel_stats<T: Real>(xc: &Plane<T>, yc: &Plane<T>, k: &[T; WINDOW]) -> ChannelStats<T> {
    let sq = |a: &Plane<T>, b: &Plane<T>| Plane { width: a.width, height: a.height, data: a.data.iter().zip(&b.data).map(|(u, v)| *u * *v).collect() };
    let mu_x = filter_valid(xc, k);
    let mu_y = filter_valid(yc, k);
    let mut sxx = filter_valid(&sq(xc, xc), k);
    let mut syy = filter_valid(&sq(yc, yc), k);
    let mut sxy = filter_valid(&sq(xc, yc), k);
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        sxx.data[i] -= mx * mx;
        syy.data[i] -= my * my;
        sxy.data[i] -= mx * my;
    }
    ChannelStats { mu_x, mu_y, sxx, syy, sxy }
}

#[inline]
fn index<T: Real>(mx: T, my: T, sxx: T, syy: T, sxy: T) -> (T, [T; 4]) {
    let two = lit::<T>(2.0);
    let a1 = two * mx * my + lit(C1);
    let a2 = two * sxy + lit(C2);
    let b1 = mx * mx + my * my + lit(C1);
    let b2 = sxx + syy + lit(C2);
    ((a1 * a2) / (b1 * b2), [a1, a2, b1, b2])
}

/// Mean SSIM index.
pub fn ssim<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    check(x, y)?;
    let k = gaussian_window();
    let mut sum = T::zero();
    let mut count = 0usize;
    for c in 0..3 {
        let s = channel_stats(&x.channel(c), &y.channel(c), &k);
        for i in 0..s.mu_x.data.len() {
            sum += index(s.mu_x.data[i], s.mu_y.data[i], s.sxx.data[i], s.syy.data[i], s.sxy.data[i]).0;
        }
        count += s.mu_x.data.len();
    }
    Ok(sum / lit(count as f64))
}

/// `1 − SSIM(x, y)`.
pub fn ssim_loss<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    Ok(T::one() - ssim(x, y)?)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<(T, Image<T>)> {
    check(x, y)?;
    let k = gaussian_window();
    let two = lit::<T>(2.0);
    let mut sum = T::zero();
    let windows = (x.width + 1 - WINDOW) * (x.height + 1 - WINDOW);
    let norm = T::one() / lit((3 * windows) as f64);
    let mut grads: Vec<Plane<T>> = Vec::with_capacity(3);
    for c in 0..3 {
        let (xc, yc) = (x.channel(c), y.channel(c));
        let s = channel_stats(&xc, &yc, &k);
        let n = s.mu_x.data.len();
        // Partials with respect to μx, E[x²] and E[xy] at each window.
        let mut d_mu = Plane::new(s.mu_x.width, s.mu_x.height);
        let mut d_ex2 = Plane::new(s.mu_x.width, s.mu_x.height);
        let mut d_exy = Plane::new(s.mu_x.width, s.mu_x.height);
        for i in 0..n {
            let (mx, my) = (s.mu_x.data[i], s.mu_y.data[i]);
            let (v, [a1, a2, b1, b2]) = index(mx, my, s.sxx.data[i], s.syy.data[i], s.sxy.data[i]);
            sum += v;
            let den = b1 * b2;
            let ds_dmu = two * my * a2 / den - two * mx * v / b1;
            let ds_dsxx = -v / b2;
            let ds_dsxy = two * a1 / den;
            d_mu.data[i] = norm * (ds_dmu - two * mx * ds_dsxx - my * ds_dsxy);
            d_ex2.data[i] = norm * ds_dsxx;
            d_exy.data[i] = norm * ds_dsxy;
        }
        let g_mu = filter_adjoint(&d_mu, &k, x.width, x.height);
        let g_ex2 = filter_adjoint(&d_ex2, &k, x.width, x.height);
        let g_exy = filter_adjoint(&d_exy, &k, x.width, x.height);
        let mut g = Plane::new(x.width, x.height);
        for i in 0..g.data.len() {
            g.data[i] = g_mu.data[i] + two * xc.data[i] * g_ex2.data[i] + yc.data[i] * g_exy.data[i];
        }
        grads.push(g);
    }
    let grads: [Plane<T>; 3] = grads.try_into().map_err(|_| invalid("channel count"))?;
    Ok((sum * norm, Image::from_channels(&grads)))
}
