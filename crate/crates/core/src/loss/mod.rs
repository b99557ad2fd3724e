//! Training objective terms and evaluation metrics.

mod lpips;
mod report;
mod ssim;

pub use lpips::{lpips, lpips_with_grad, ConvLayer, ConvPyramid, FeatureExtractor, FeatureMap, NullExtractor, PYRAMID_WIDTHS};
pub use report::{format_metric_report, parse_metric_report, write_metric_report, MetricRow};
pub use ssim::{gaussian_window, ssim, ssim_loss, ssim_with_grad, C1, C2, WINDOW, WINDOW_SIGMA};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::scalar::{lit, Real};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

fn same_shape<T: Real>(x: &Image<T>, y: &Image<T>, what: &str) -> Result<()> {
    if !x.same_shape(y) {
        return Err(invalid(format!("{what}: image sizes differ ({}×{} vs {}×{})", x.width, x.height, y.width, y.height)));
    }
    Ok(())
}

/// Mean absolute difference over pixels and channels.
pub fn l1_rgb<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    same_shape(x, y, "L1")?;
    let s: T = x.data.iter().zip(&y.data).map(|(a, b)| (*a - *b).abs()).sum();
    Ok(s / lit(x.data.len() as f64))
}

/// [`l1_rgb`] and its gradient with respect to `x` (zero where `x = y`).
pub fn l1_rgb_with_grad<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<(T, Image<T>)> {
    let v = l1_rgb(x, y)?;
    let inv = T::one() / lit(x.data.len() as f64);
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| {
            let d = *a - *b;
            if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((v, Image { width: x.width, height: x.height, data }))
}

pub fn mse<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    same_shape(x, y, "MSE")?;
    let s: T = x.data.iter().zip(&y.data).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok(s / lit(x.data.len() as f64))
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at
/// [`PSNR_CAP`].
pub fn psnr<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?.as_f64()))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP
    } else {
        -10.0 * mse.log10()
    }
}

fn nonempty<U>(v: &[U], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(format!("{what} regularizer needs at least one entry")));
    }
    Ok(())
}

/// `(1/N) Σ ‖Δxᵢ‖²`
pub fn reg_offset<T: Real>(offsets: &[Vec3<T>]) -> Result<T> {
    nonempty(offsets, "offset")?;
    let s: T = offsets.iter().map(|o| o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sum();
    Ok(s / lit(offsets.len() as f64))
}

pub fn reg_offset_grad<T: Real>(offsets: &[Vec3<T>]) -> Vec<Vec3<T>> {
    let k = lit::<T>(2.0 / offsets.len() as f64);
    offsets.iter().map(|o| o.map(|v| k * v)).collect()
}

/// `(1/N) Σ ŝᵢ²` over the raw (pre-activation) scales.
pub fn reg_scale<T: Real>(raw_scales: &[T]) -> Result<T> {
    nonempty(raw_scales, "scale")?;
    mean_square(raw_scales)
}

/// `(1/F) Σ tᵢ²` over every feature-tensor entry.
pub fn reg_feature<T: Real>(features: &[T]) -> Result<T> {
    nonempty(features, "feature")?;
    mean_square(features)
}

fn mean_square<T: Real>(v: &[T]) -> Result<T> {
    let s: T = v.iter().map(|x| *x * *x).sum();
    Ok(s / lit(v.len() as f64))
}

/// Gradient of a mean of squares: `2v/len`.
pub fn mean_square_grad<T: Real>(v: &[T]) -> Vec<T> {
    let k = lit::<T>(2.0 / v.len() as f64);
    v.iter().map(|x| k * *x).collect()
}

/// Weights of the six objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub offset: f64,
    pub scale: f64,
    pub feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 0.8, ssim: 0.2, lpips: 0.2, offset: 10.0, scale: 1.0, feature: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(format!("loss weight {name} must be a finite non-negative number, got {w}")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [("rgb", self.rgb), ("ssim", self.ssim), ("lpips", self.lpips), ("offset", self.offset), ("scale", self.scale), ("feature", self.feature)]
    }
}

/// Unweighted term values. `ssim` holds the SSIM loss `1 − SSIM`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub rgb: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub offset: f64,
    pub scale: f64,
    pub feature: f64,
}

impl LossTerms {
    fn values(&self) -> [f64; 6] {
        [self.rgb, self.ssim, self.lpips, self.offset, self.scale, self.feature]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    pub total: f64,
}

/// Weighted sum of the objective terms.
pub fn total_loss(terms: LossTerms, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    const NAMES: [&str; 6] = ["rgb", "ssim", "lpips", "offset", "scale", "feature"];
    let mut total = 0.0;
    for ((v, (_, w)), name) in terms.values().iter().zip(weights.named()).zip(NAMES) {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(invalid(format!("loss term {name} is {v}; terms must be finite and non-negative")));
        }
        total += w * v;
    }
    Ok(LossBreakdown { terms, total })
}

/// Photometric terms for one frame and the gradient of
/// `λ_rgb·L1 + λ_ssim·(1 − SSIM) + λ_lpips·LPIPS` with respect to `render`.
pub fn photometric_with_grad<T: Real>(
    render: &Image<T>,
    target: &Image<T>,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<(LossTerms, Image<T>)> {
    let (l1, g_l1) = l1_rgb_with_grad(render, target)?;
    let (s, g_s) = ssim_with_grad(render, target)?;
    let use_lpips = weights.lpips > 0.0 && extractor.layer_count() > 0;
    let (lp, g_lp) = if use_lpips { lpips_with_grad(render, target, extractor)? } else { (T::zero(), Image::new(render.width, render.height)) };
    let (wr, ws, wl) = (lit::<T>(weights.rgb), lit::<T>(weights.ssim), lit::<T>(weights.lpips));
    let data = g_l1.data.iter().zip(&g_s.data).zip(&g_lp.data).map(|((a, b), c)| wr * *a - ws * *b + wl * *c).collect();
    let terms = LossTerms { rgb: l1.as_f64(), ssim: 1.0 - s.as_f64(), lpips: lp.as_f64(), ..Default::default() };
    Ok((terms, Image { width: render.width, height: render.height, data }))
}
