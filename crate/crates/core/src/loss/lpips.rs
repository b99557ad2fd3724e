//! Perceptual distance over a pluggable feature extractor:
//!
//! `Σ_l 1/(H_l·W_l) Σ_{h,w} ‖w_l ⊙ (f̂ˡ_x − f̂ˡ_y)‖²`
//!
//! where `f̂` are feature vectors unit-normalized along channels.
//!
//! [`ConvPyramid`] weight files (little-endian):
//!
//! ```text
//! magic "OSFX" | u32 version (1) | u32 levels
//! per level: u32 in | u32 out | u32 kernel | u32 stride | u32 padding
//!            f32 weights[out][in][kernel][kernel] | f32 bias[out] | f32 channel weights[out]
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Real};

const NORM_EPS: f64 = 1e-10;
const WEIGHTS_MAGIC: &[u8; 4] = b"OSFX";
const WEIGHTS_VERSION: u32 = 1;

/// Channel-major `channels × height × width` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Deterministic multi-layer feature map with fixed per-channel weights.
pub trait FeatureExtractor<T: Real>: Send + Sync {
    /// Number of compared layers; zero disables the distance.
    fn layer_count(&self) -> usize;

    /// `w_l` for layer `l`, one entry per channel.
    fn channel_weights(&self, layer: usize) -> &[T];

    /// Raw (unnormalized) activations of every compared layer.
    fn extract(&self, image: &Image<T>) -> Result<Vec<FeatureMap<T>>>;

    /// Gradient with respect to `image` given gradients for the activations
    /// produced by [`extract`](Self::extract) on the same image.
    fn backward(&self, image: &Image<T>, features: &[FeatureMap<T>], d_features: &[FeatureMap<T>]) -> Result<Image<T>>;
}

/// Disables the perceptual term.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullExtractor;

impl<T: Real> FeatureExtractor<T> for NullExtractor {
    fn layer_count(&self) -> usize {
        0
    }

    fn channel_weights(&self, _layer: usize) -> &[T] {
        &[]
    }

    fn extract(&self, _image: &Image<T>) -> Result<Vec<FeatureMap<T>>> {
        Ok(Vec::new())
    }

    fn backward(&self, image: &Image<T>, _f: &[FeatureMap<T>], _d: &[FeatureMap<T>]) -> Result<Image<T>> {
        Ok(Image::new(image.width, image.height))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub channel_weights: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.inputs + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Input coordinate for output `o` and tap `k`, if inside the image.
    #[inline]
    fn tap(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.padding as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }

    fn forward(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let (oh, ow) = (self.out_size(x.height), self.out_size(x.width));
        let mut out = FeatureMap::zeros(self.outputs, oh, ow);
        for o in 0..self.outputs {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = self.bias[o];
                    for i in 0..self.inputs {
                        for ky in 0..self.kernel {
                            let Some(iy) = self.tap(y, ky, x.height) else { continue };
                            for kx in 0..self.kernel {
                                if let Some(ix) = self.tap(xo, kx, x.width) {
                                    acc += self.w(o, i, ky, kx) * x.at(i, iy, ix);
                                }
                            }
                        }
                    }
                    out.data[(o * oh + y) * ow + xo] = acc.tanh();
                }
            }
        }
        out
    }

    /// Input gradient given the layer output `y` and its gradient `dy`.
    fn backward(&self, x: &FeatureMap<T>, y: &FeatureMap<T>, dy: &FeatureMap<T>) -> FeatureMap<T> {
        let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
        for o in 0..self.outputs {
            for yo in 0..y.height {
                for xo in 0..y.width {
                    let a = y.at(o, yo, xo);
                    let dz = dy.at(o, yo, xo) * (T::one() - a * a);
                    if dz == T::zero() {
                        continue;
                    }
                    for i in 0..self.inputs {
                        for ky in 0..self.kernel {
                            let Some(iy) = self.tap(yo, ky, x.height) else { continue };
                            for kx in 0..self.kernel {
                                if let Some(ix) = self.tap(xo, kx, x.width) {
                                    dx.data[(i * x.height + iy) * x.width + ix] += self.w(o, i, ky, kx) * dz;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Stack of strided 3×3 tanh convolutions. Inputs are mapped from `[0, 1]`
/// to `[−1, 1]` first; every layer's output is compared.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPyramid<T> {
    pub layers: Vec<ConvLayer<T>>,
}

/// Channel widths of the default random pyramid.
pub const PYRAMID_WIDTHS: [usize; 4] = [3, 8, 16, 32];

impl<T: Real> ConvPyramid<T> {
    /// Fixed random weights: `N(0, 1/fan_in)` kernels, `N(0, 0.1²)` biases,
    /// unit channel weights.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = PYRAMID_WIDTHS
            .windows(2)
            .map(|w| {
                let (inputs, outputs, kernel) = (w[0], w[1], 3);
                let fan_in = (inputs * kernel * kernel) as f64;
                let normal = Normal::new(0.0, fan_in.sqrt().recip()).expect("valid normal");
                let bias = Normal::new(0.0, 0.1).expect("valid normal");
                ConvLayer {
                    inputs,
                    outputs,
                    kernel,
                    stride: 2,
                    padding: 1,
                    weights: (0..outputs * inputs * kernel * kernel).map(|_| lit(normal.sample(&mut rng))).collect(),
                    bias: (0..outputs).map(|_| lit(bias.sample(&mut rng))).collect(),
                    channel_weights: vec![T::one(); outputs],
                }
            })
            .collect();
        ConvPyramid { layers }
    }

    fn input_map(image: &Image<T>) -> FeatureMap<T> {
        let (w, h) = (image.width, image.height);
        let mut m = FeatureMap::zeros(3, h, w);
        let two = lit::<T>(2.0);
        for y in 0..h {
            for x in 0..w {
                let p = image.pixel(x, y);
                for c in 0..3 {
                    m.data[(c * h + y) * w + x] = two * p[c] - T::one();
                }
            }
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        let u = |v: usize, out: &mut Vec<u8>| out.extend_from_slice(&(v as u32).to_le_bytes());
        u(WEIGHTS_VERSION as usize, &mut out);
        u(self.layers.len(), &mut out);
        for l in &self.layers {
            for v in [l.inputs, l.outputs, l.kernel, l.stride, l.padding] {
                u(v, &mut out);
            }
            for v in l.weights.iter().chain(&l.bias).chain(&l.channel_weights) {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0, path };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(r.corrupt("not a feature-extractor weight file"));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION as usize {
            return Err(r.corrupt(format!("weight file version {version}, expected {WEIGHTS_VERSION}")));
        }
        let n = r.u32()?;
        let mut layers = Vec::with_capacity(n);
        let mut prev = 3;
        for l in 0..n {
            let [inputs, outputs, kernel, stride, padding] = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            if inputs != prev || outputs == 0 || kernel == 0 || stride == 0 {
                return Err(r.corrupt(format!("layer {l} has inconsistent shape")));
            }
            prev = outputs;
            let weights = r.floats(outputs * inputs * kernel * kernel)?;
            let bias = r.floats(outputs)?;
            let channel_weights = r.floats(outputs)?;
            layers.push(ConvLayer { inputs, outputs, kernel, stride, padding, weights, bias, channel_weights });
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(ConvPyramid { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

impl<T: Real> FeatureExtractor<T> for ConvPyramid<T> {
    fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn channel_weights(&self, layer: usize) -> &[T] {
        &self.layers[layer].channel_weights
    }

    fn extract(&self, image: &Image<T>) -> Result<Vec<FeatureMap<T>>> {
        let mut maps = Vec::with_capacity(self.layers.len());
        let mut cur = Self::input_map(image);
        for l in &self.layers {
            cur = l.forward(&cur);
            maps.push(cur.clone());
        }
        Ok(maps)
    }

    fn backward(&self, image: &Image<T>, features: &[FeatureMap<T>], d_features: &[FeatureMap<T>]) -> Result<Image<T>> {
        if features.len() != self.layers.len() || d_features.len() != self.layers.len() {
            return Err(invalid("feature gradient count does not match the pyramid"));
        }
        let input = Self::input_map(image);
        let mut carry: Option<FeatureMap<T>> = None;
        for l in (0..self.layers.len()).rev() {
            let mut dy = d_features[l].clone();
            if let Some(c) = carry.take() {
                for (a, b) in dy.data.iter_mut().zip(&c.data) {
                    *a += *b;
                }
            }
            let x = if l == 0 { &input } else { &features[l - 1] };
            carry = Some(self.layers[l].backward(x, &features[l], &dy));
        }
        let d_in = carry.expect("at least one layer");
        let two = lit::<T>(2.0);
        let (w, h) = (image.width, image.height);
        Ok(Image::from_fn(w, h, |x, y| [0, 1, 2].map(|c| two * d_in.data[(c * h + y) * w + x])))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, m: impl Into<String>) -> Error {
        Error::Corrupt { path: self.path.to_path_buf(), message: m.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| self.corrupt(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect())
    }
}

fn normalized<T: Real>(m: &FeatureMap<T>) -> (FeatureMap<T>, Vec<T>) {
    let hw = m.height * m.width;
    let mut out = m.clone();
    let mut norms = vec![T::zero(); hw];
    for (p, n) in norms.iter_mut().enumerate() {
        let s: T = (0..m.channels).map(|c| m.data[c * hw + p] * m.data[c * hw + p]).sum();
        *n = s.sqrt();
        let inv = T::one() / (*n + lit(NORM_EPS));
        for c in 0..m.channels {
            out.data[c * hw + p] *= inv;
        }
    }
    (out, norms)
}

fn check_pair<T: Real>(a: &[FeatureMap<T>], b: &[FeatureMap<T>], ext: &dyn FeatureExtractor<T>) -> Result<()> {
    if a.len() != ext.layer_count() || b.len() != ext.layer_count() {
        return Err(invalid("extractor produced an unexpected number of layers"));
    }
    for (l, (fa, fb)) in a.iter().zip(b).enumerate() {
        if (fa.channels, fa.height, fa.width) != (fb.channels, fb.height, fb.width) {
            return Err(invalid(format!("layer {l} shapes differ between the two images")));
        }
        if ext.channel_weights(l).len() != fa.channels {
            return Err(invalid(format!("layer {l} has {} channels but {} weights", fa.channels, ext.channel_weights(l).len())));
        }
    }
    Ok(())
}

/// Perceptual distance between `x` and `y`.
pub fn lpips<T: Real>(x: &Image<T>, y: &Image<T>, ext: &dyn FeatureExtractor<T>) -> Result<T> {
    if !x.same_shape(y) {
        return Err(invalid("perceptual distance inputs differ in size"));
    }
    if ext.layer_count() == 0 {
        return Ok(T::zero());
    }
    let (fx, fy) = (ext.extract(x)?, ext.extract(y)?);
    check_pair(&fx, &fy, ext)?;
    let mut total = T::zero();
    for (l, (a, b)) in fx.iter().zip(&fy).enumerate() {
        let (na, nb) = (normalized(a).0, normalized(b).0);
        let w = ext.channel_weights(l);
        let hw = a.height * a.width;
        let mut s = T::zero();
        for c in 0..a.channels {
            for p in 0..hw {
                let d = w[c] * (na.data[c * hw + p] - nb.data[c * hw + p]);
                s += d * d;
            }
        }
        total += s / lit(hw as f64);
    }
    Ok(total)
}

/// Perceptual distance and its gradient with respect to `x`.
pub fn lpips_with_grad<T: Real>(x: &Image<T>, y: &Image<T>, ext: &dyn FeatureExtractor<T>) -> Result<(T, Image<T>)> {
    if !x.same_shape(y) {
        return Err(invalid("perceptual distance inputs differ in size"));
    }
    if ext.layer_count() == 0 {
        return Ok((T::zero(), Image::new(x.width, x.height)));
    }
    let (fx, fy) = (ext.extract(x)?, ext.extract(y)?);
    check_pair(&fx, &fy, ext)?;
    let two = lit::<T>(2.0);
    let eps = lit::<T>(NORM_EPS);
    let mut total = T::zero();
    let mut d_feats = Vec::with_capacity(fx.len());
    for (l, (a, b)) in fx.iter().zip(&fy).enumerate() {
        let ((na, norms), nb) = (normalized(a), normalized(b).0);
        let w = ext.channel_weights(l);
        let hw = a.height * a.width;
        let inv_hw = T::one() / lit(hw as f64);
        let mut s = T::zero();
        let mut d_hat = FeatureMap::zeros(a.channels, a.height, a.width);
        for c in 0..a.channels {
            for p in 0..hw {
                let diff = na.data[c * hw + p] - nb.data[c * hw + p];
                let d = w[c] * diff;
                s += d * d;
                d_hat.data[c * hw + p] = two * w[c] * w[c] * diff * inv_hw;
            }
        }
        total += s * inv_hw;
        // f̂ = f / (‖f‖ + ε)
        let mut d_raw = FeatureMap::zeros(a.channels, a.height, a.width);
        for p in 0..hw {
            let n = norms[p];
            let denom = n + eps;
            let proj: T = (0..a.channels).map(|c| a.data[c * hw + p] * d_hat.data[c * hw + p]).sum();
            for c in 0..a.channels {
                let mut g = d_hat.data[c * hw + p] / denom;
                if n > T::zero() {
                    g -= a.data[c * hw + p] * proj / (n * denom * denom);
                }
                d_raw.data[c * hw + p] = g;
            }
        }
        d_feats.push(d_raw);
    }
    let grad = ext.backward(x, &fx, &d_feats)?;
    Ok((total, grad))
}
