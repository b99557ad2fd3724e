//! Learnable appearance: the UV feature tensor, the decoder that turns it into
//! per-point Gaussian parameters, and assembly and reposing of the resulting
//! Gaussian set.

mod checkpoint;
mod decoder;
mod ply;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, MomentBuffers, CHECKPOINT_VERSION};
pub use decoder::{DecoderGradients, DecoderNet, Dense, ForwardCache};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PLY_PROPERTIES};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::body::{joint_locations, lbs, BodyState, SurfaceSamples, TemplateBody, UVPositionMap};
use crate::error::{invalid, Result};
use crate::linalg::{mat_to_quat, quat_identity, quat_mul, quat_normalize, Quat, Vec3};
use crate::scalar::{lit, sigmoid, Real};

/// Standard deviation of the initial feature values.
pub const FEATURE_INIT_STD: f64 = 0.01;

/// Outputs per point: offset (3), color (3), scale (1).
pub const DECODER_OUTPUTS: usize = 7;

/// Learnable `rows × cols × channels` tensor aligned with the UV map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Pixel-major, channels innermost.
    pub values: Vec<T>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn zeros(resolution: (usize, usize), channels: usize) -> Self {
        let (rows, cols) = resolution;
        FeatureTensor { rows, cols, channels, values: vec![T::zero(); rows * cols * channels] }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Feature vector at linear pixel index `p`.
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }
}

/// I.i.d. normal features with standard deviation [`FEATURE_INIT_STD`].
pub fn init_feature_tensor<T: Real>(resolution: (usize, usize), channels: usize, seed: u64) -> Result<FeatureTensor<T>> {
    let (rows, cols) = resolution;
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(invalid(format!("feature tensor dimensions must be positive, got {rows}×{cols}×{channels}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, FEATURE_INIT_STD).expect("valid normal");
    let values = (0..rows * cols * channels).map(|_| lit(normal.sample(&mut rng))).collect();
    Ok(FeatureTensor { rows, cols, channels, values })
}

/// Raw decoder outputs, one row per valid UV pixel in sample order.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedParams<T> {
    pub offsets: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
    pub scales: Vec<T>,
}

impl<T: Real> DecodedParams<T> {
    pub fn zeros(n: usize) -> Self {
        DecodedParams { offsets: vec![[T::zero(); 3]; n], colors: vec![[T::zero(); 3]; n], scales: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    fn from_rows(out: &[T]) -> Self {
        let mut d = DecodedParams {
            offsets: Vec::with_capacity(out.len() / DECODER_OUTPUTS),
            colors: Vec::with_capacity(out.len() / DECODER_OUTPUTS),
            scales: Vec::with_capacity(out.len() / DECODER_OUTPUTS),
        };
        for r in out.chunks_exact(DECODER_OUTPUTS) {
            d.offsets.push([r[0], r[1], r[2]]);
            d.colors.push([r[3], r[4], r[5]]);
            d.scales.push(r[6]);
        }
        d
    }

    fn to_rows(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * DECODER_OUTPUTS);
        for ((o, c), s) in self.offsets.iter().zip(&self.colors).zip(&self.scales) {
            out.extend_from_slice(o);
            out.extend_from_slice(c);
            out.push(*s);
        }
        out
    }
}

/// Decoder input rows and activations needed by [`decode_backward`].
#[derive(Clone, Debug)]
pub struct DecodeCache<T> {
    forward: ForwardCache<T>,
}

fn decoder_input<T: Real>(features: &FeatureTensor<T>, posmap: &UVPositionMap<T>, net: &DecoderNet<T>) -> Result<Vec<T>> {
    if features.resolution() != (posmap.rows, posmap.cols) {
        return Err(invalid(format!("feature tensor is {}×{}, position map is {}×{}", features.rows, features.cols, posmap.rows, posmap.cols)));
    }
    if net.input_width() != features.channels + 3 || net.output_width() != DECODER_OUTPUTS {
        return Err(invalid(format!("decoder maps {} → {}, expected {} → {DECODER_OUTPUTS}", net.input_width(), net.output_width(), features.channels + 3)));
    }
    let mut input = Vec::with_capacity(posmap.valid_count() * net.input_width());
    for &p in &posmap.sample_pixels {
        input.extend_from_slice(features.pixel(p));
        input.extend_from_slice(&posmap.positions[p]);
    }
    Ok(input)
}

/// Runs the decoder on `cat(feature, position)` at every valid UV pixel.
pub fn decode<T: Real>(features: &FeatureTensor<T>, posmap: &UVPositionMap<T>, net: &DecoderNet<T>) -> Result<DecodedParams<T>> {
    Ok(decode_with_cache(features, posmap, net)?.0)
}

pub fn decode_with_cache<T: Real>(features: &FeatureTensor<T>, posmap: &UVPositionMap<T>, net: &DecoderNet<T>) -> Result<(DecodedParams<T>, DecodeCache<T>)> {
    let input = decoder_input(features, posmap, net)?;
    let (out, forward) = net.forward(&input, posmap.valid_count())?;
    Ok((DecodedParams::from_rows(&out), DecodeCache { forward }))
}

/// Pulls gradients with respect to the decoded parameters back to the feature
/// tensor (dense, zero at invalid pixels) and the decoder weights.
pub fn decode_backward<T: Real>(
    features: &FeatureTensor<T>,
    posmap: &UVPositionMap<T>,
    net: &DecoderNet<T>,
    cache: &DecodeCache<T>,
    grad: &DecodedParams<T>,
) -> Result<(FeatureTensor<T>, DecoderGradients<T>)> {
    if grad.len() != posmap.valid_count() {
        return Err(invalid("decoded-parameter gradient does not match the position map"));
    }
    let (g_net, d_in) = net.backward(&cache.forward, &grad.to_rows())?;
    let mut g_feat = FeatureTensor::zeros(features.resolution(), features.channels);
    let c = features.channels;
    for (row, &p) in d_in.chunks_exact(c + 3).zip(&posmap.sample_pixels) {
        g_feat.values[p * c..(p + 1) * c].copy_from_slice(&row[..c]);
    }
    Ok((g_feat, g_net))
}

/// Renderable Gaussians. Quaternions are `[w, x, y, z]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianSet<T> {
    pub centers: Vec<Vec3<T>>,
    pub colors: Vec<Vec3<T>>,
    pub opacities: Vec<T>,
    pub scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
}

impl<T: Real> GaussianSet<T> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn push(&mut self, center: Vec3<T>, color: Vec3<T>, opacity: T, scale: Vec3<T>, rotation: Quat<T>) {
        self.centers.push(center);
        self.colors.push(color);
        self.opacities.push(opacity);
        self.scales.push(scale);
        self.rotations.push(rotation);
    }

    /// Checks field lengths, unit quaternions, positive scales and `[0, 1]`
    /// colors and opacities.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [self.colors.len(), self.opacities.len(), self.scales.len(), self.rotations.len()].iter().any(|&l| l != n) {
            return Err(invalid("Gaussian set fields have different lengths"));
        }
        let unit = |x: T| x >= T::zero() && x <= T::one();
        for i in 0..n {
            let q = self.rotations[i];
            let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if (qn - T::one()).abs() > lit(1e-6) {
                return Err(invalid(format!("Gaussian {i}: quaternion norm {qn}")));
            }
            if !self.scales[i].iter().all(|&s| s > T::zero() && s.is_finite()) {
                return Err(invalid(format!("Gaussian {i}: non-positive scale")));
            }
            if !self.colors[i].iter().all(|&c| unit(c)) || !unit(self.opacities[i]) {
                return Err(invalid(format!("Gaussian {i}: color or opacity outside [0, 1]")));
            }
            if !self.centers[i].iter().all(|c| c.is_finite()) {
                return Err(invalid(format!("Gaussian {i}: non-finite center")));
            }
        }
        Ok(())
    }
}

/// Canonical Gaussians from the shaped surface points and decoded parameters.
pub fn assemble<T: Real>(surface: &[Vec3<T>], decoded: &DecodedParams<T>, base_scale: T) -> Result<GaussianSet<T>> {
    if surface.len() != decoded.len() {
        return Err(invalid(format!("{} surface points but {} decoded rows", surface.len(), decoded.len())));
    }
    let centers = crate::body::apply_offsets(surface, &decoded.offsets)?;
    let n = surface.len();
    Ok(GaussianSet {
        centers,
        colors: decoded.colors.iter().map(|c| c.map(sigmoid)).collect(),
        opacities: vec![T::one(); n],
        scales: decoded.scales.iter().map(|&s| [base_scale * s.exp(); 3]).collect(),
        rotations: vec![quat_identity(); n],
    })
}

/// Gradient of [`assemble`] with respect to the decoded parameters, given
/// gradients for the assembled centers, colors and scales.
pub fn assemble_backward<T: Real>(assembled: &GaussianSet<T>, d_centers: &[Vec3<T>], d_colors: &[Vec3<T>], d_scales: &[Vec3<T>]) -> DecodedParams<T> {
    let one = T::one();
    DecodedParams {
        offsets: d_centers.to_vec(),
        colors: assembled.colors.iter().zip(d_colors).map(|(c, g)| [0, 1, 2].map(|k| g[k] * c[k] * (one - c[k]))).collect(),
        scales: assembled.scales.iter().zip(d_scales).map(|(s, g)| g[0] * s[0] + g[1] * s[1] + g[2] * s[2]).collect(),
    }
}

fn check_repose<T: Real>(gaussians: &GaussianSet<T>, samples: &SurfaceSamples<T>, state: &BodyState<T>, template: &TemplateBody<T>) -> Result<()> {
    if gaussians.len() != samples.len() {
        return Err(invalid(format!("{} Gaussians but {} surface samples", gaussians.len(), samples.len())));
    }
    if state.theta.len() != template.joint_count() || state.delta_theta.len() != template.joint_count() {
        return Err(invalid("body state joint count does not match the template"));
    }
    Ok(())
}

/// Poses canonical Gaussians with the refined pose `θ + Δθ` and translation
/// `t + Δt`. Rotations pick up each point's blended joint rotation.
pub fn repose<T: Real>(gaussians: &GaussianSet<T>, samples: &SurfaceSamples<T>, state: &BodyState<T>, template: &TemplateBody<T>) -> Result<GaussianSet<T>> {
    check_repose(gaussians, samples, state, template)?;
    let joints = joint_locations(template, &state.beta)?;
    let transforms = lbs::joint_transforms(&joints, &template.parents, &state.refined_theta())?;
    let centers = lbs::skin_with_transforms(&gaussians.centers, &samples.skin_weights, &transforms, state.refined_translation());
    let blended = lbs::blended_rotations(&samples.skin_weights, &transforms);
    let rotations = blended.par_iter().zip(gaussians.rotations.par_iter()).map(|(m, q)| quat_normalize(quat_mul(mat_to_quat(m), *q))).collect();
    Ok(GaussianSet { centers, colors: gaussians.colors.clone(), opacities: gaussians.opacities.clone(), scales: gaussians.scales.clone(), rotations })
}

/// Gradients flowing out of [`repose`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReposeGradients<T> {
    pub centers: Vec<Vec3<T>>,
    pub delta_theta: Vec<Vec3<T>>,
    pub delta_translation: Vec3<T>,
}

/// Reverse pass of [`repose`] for the posed centers.
///
/// Rotation gradients are not propagated: the canonical rotations are fixed
/// and, with isotropic scales, the posed rotation does not affect rendering.
pub fn repose_backward<T: Real>(
    gaussians: &GaussianSet<T>,
    samples: &SurfaceSamples<T>,
    state: &BodyState<T>,
    template: &TemplateBody<T>,
    d_posed_centers: &[Vec3<T>],
) -> Result<ReposeGradients<T>> {
    check_repose(gaussians, samples, state, template)?;
    let joints = joint_locations(template, &state.beta)?;
    let g = lbs::skin_lbs_backward(&gaussians.centers, &samples.skin_weights, &joints, &template.parents, &state.refined_theta(), d_posed_centers)?;
    Ok(ReposeGradients { centers: g.points, delta_theta: g.theta, delta_translation: g.translation })
}
