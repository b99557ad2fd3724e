//! Optimization of the feature tensor, the decoder and per-frame motion
//! corrections against a set of calibrated frames.

mod adam;

pub use adam::{adam_step, BETA1, BETA2, EPSILON};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{mean_nearest_neighbor_distance, sample_surface, uv_position_map, BodyState, SurfaceSamples, TemplateBody, UVPositionMap};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    assemble, assemble_backward, decode, decode_backward, decode_with_cache, init_feature_tensor, repose, repose_backward, Checkpoint, DecoderGradients,
    DecoderNet, FeatureTensor, GaussianSet, MomentBuffers, DECODER_OUTPUTS,
};
use crate::image::Image;
use crate::linalg::{zero3, Vec3};
use crate::loss::{
    mean_square_grad, photometric_with_grad, reg_feature, reg_offset, reg_offset_grad, reg_scale, total_loss, FeatureExtractor, LossBreakdown, LossTerms,
    LossWeights,
};
use crate::orbit::CameraPose;
use crate::render::{backward as render_backward, rasterize, render_image};
use crate::scalar::{lit, Real};

/// Seed offset separating the decoder initialization from the features.
const NET_SEED_OFFSET: u64 = 0x5eed_0001;
/// Seed offset for the per-epoch frame shuffle.
const SHUFFLE_SEED_OFFSET: u64 = 0x5eed_0002;

/// Shape of the learnable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Surface samples, one Gaussian each.
    pub samples: usize,
    /// Side of the square UV map.
    pub uv_resolution: usize,
    pub feature_channels: usize,
    pub hidden_widths: Vec<usize>,
    pub sample_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { samples: 4096, uv_resolution: 128, feature_channels: 32, hidden_widths: vec![128, 128], sample_seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.uv_resolution == 0 || self.feature_channels == 0 {
            return Err(invalid("model needs at least 2 samples and a positive UV resolution and channel count"));
        }
        if self.samples > self.uv_resolution * self.uv_resolution {
            return Err(invalid(format!("{} samples do not fit a {r}×{r} UV map", self.samples, r = self.uv_resolution)));
        }
        if self.hidden_widths.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_channels + 3];
        w.extend(&self.hidden_widths);
        w.push(DECODER_OUTPUTS);
        w
    }
}

/// Optimizer and objective settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub motion_learning_rate: f64,
    /// Steps before motion corrections start to update.
    pub motion_delay: u64,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_interval: u64,
    pub background: [f64; 3],
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 2,
            learning_rate: 3e-3,
            motion_learning_rate: 1e-4,
            motion_delay: 0,
            seed: 0,
            checkpoint_interval: 0,
            background: [1.0; 3],
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be positive"));
        }
        for (name, r) in [("learning_rate", self.learning_rate), ("motion_learning_rate", self.motion_learning_rate)] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {r}")));
            }
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("background channels must lie in [0, 1]"));
        }
        self.weights.validate()
    }

    /// Optimizer steps in a full run over `frames` frames.
    pub fn total_steps(&self, frames: usize) -> u64 {
        (self.epochs * frames.div_ceil(self.batch_size)) as u64
    }

    fn background<T: Real>(&self) -> Vec3<T> {
        self.background.map(lit)
    }
}

/// The fixed, non-learnable side of the model: template, samples, UV map and
/// the canonical surface the Gaussians hang off.
#[derive(Clone, Debug)]
pub struct Subject<T> {
    pub template: TemplateBody<T>,
    pub beta: Vec<T>,
    pub samples: SurfaceSamples<T>,
    pub posmap: UVPositionMap<T>,
    /// Sample positions on the shaped canonical surface.
    pub surface: Vec<Vec3<T>>,
    pub base_scale: T,
    pub sample_seed: u64,
}

impl<T: Real> Subject<T> {
    pub fn new(template: TemplateBody<T>, beta: Vec<T>, model: &ModelConfig) -> Result<Self> {
        model.validate()?;
        let res = (model.uv_resolution, model.uv_resolution);
        let samples = sample_surface(&template, model.samples, res, model.sample_seed)?;
        let surface = samples.shaped_positions(&template, &beta)?;
        let posmap = uv_position_map(&samples, &surface, res)?;
        let base_scale = mean_nearest_neighbor_distance(&surface)?;
        Ok(Subject { template, beta, samples, posmap, surface, base_scale, sample_seed: model.sample_seed })
    }

    pub fn len(&self) -> usize {
        self.surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface.is_empty()
    }
}

/// One training target.
#[derive(Clone, Debug)]
pub struct TrainFrame<T> {
    pub image: Image<T>,
    pub camera: CameraPose<T>,
    /// Input articulation; its corrections are ignored in favour of the
    /// learned ones in [`TrainState`].
    pub body: BodyState<T>,
}

impl<T: Real> TrainFrame<T> {
    /// Zips frames with their cameras and body states.
    pub fn zip(images: Vec<Image<T>>, cameras: Vec<CameraPose<T>>, bodies: Vec<BodyState<T>>) -> Result<Vec<Self>> {
        if images.len() != cameras.len() || images.len() != bodies.len() {
            return Err(invalid(format!("{} frames, {} cameras and {} body states; counts must match", images.len(), cameras.len(), bodies.len())));
        }
        for (i, (img, cam)) in images.iter().zip(&cameras).enumerate() {
            if img.width != cam.width || img.height != cam.height {
                return Err(invalid(format!("frame {i} is {}×{} but its camera renders {}×{}", img.width, img.height, cam.width, cam.height)));
            }
        }
        Ok(images.into_iter().zip(cameras).zip(bodies).map(|((image, camera), body)| TrainFrame { image, camera, body }).collect())
    }
}

/// Per-frame `(Δθ, Δt)`.
pub type Correction<T> = (Vec<Vec3<T>>, Vec3<T>);

/// `(θ + Δθ, t + Δt)`.
pub fn refine_motion<T: Real>(state: &BodyState<T>) -> (Vec<Vec3<T>>, Vec3<T>) {
    (state.refined_theta(), state.refined_translation())
}

/// `body` with its corrections replaced by `correction`.
pub fn with_correction<T: Real>(body: &BodyState<T>, correction: &Correction<T>) -> BodyState<T> {
    BodyState { delta_theta: correction.0.clone(), delta_translation: correction.1, ..body.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: LossBreakdown,
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub features: FeatureTensor<T>,
    pub net: DecoderNet<T>,
    pub corrections: Vec<Correction<T>>,
    /// Features, then weights and bias of each layer, then one buffer per
    /// frame holding `Δθ` followed by `Δt`.
    pub moments: Vec<MomentBuffers<T>>,
    pub step: u64,
    pub history: Vec<LossRecord>,
}

impl<T: Real> TrainState<T> {
    /// Fresh state: random features and decoder, zero corrections.
    pub fn new(subject: &Subject<T>, model: &ModelConfig, frames: usize, seed: u64) -> Result<Self> {
        model.validate()?;
        let features = init_feature_tensor((subject.posmap.rows, subject.posmap.cols), model.feature_channels, seed)?;
        let net = DecoderNet::random(&model.decoder_widths(), seed.wrapping_add(NET_SEED_OFFSET))?;
        Ok(Self::from_parts(features, net, vec![(vec![zero3(); subject.template.joint_count()], zero3()); frames]))
    }

    /// State around given parameters with zero moments.
    pub fn from_parts(features: FeatureTensor<T>, net: DecoderNet<T>, corrections: Vec<Correction<T>>) -> Self {
        let mut moments = vec![MomentBuffers::zeros(features.values.len())];
        for l in &net.layers {
            moments.push(MomentBuffers::zeros(l.weights.len()));
            moments.push(MomentBuffers::zeros(l.bias.len()));
        }
        for c in &corrections {
            moments.push(MomentBuffers::zeros(c.0.len() * 3 + 3));
        }
        TrainState { features, net, corrections, moments, step: 0, history: Vec::new() }
    }

    fn motion_buffer(&self, frame: usize) -> usize {
        1 + 2 * self.net.layers.len() + frame
    }

    fn check_shapes(&self) -> Result<()> {
        let want = 1 + 2 * self.net.layers.len() + self.corrections.len();
        if self.moments.len() != want {
            return Err(Error::State(format!("{} moment buffers, expected {want}", self.moments.len())));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, subject: &Subject<T>) -> Checkpoint<T> {
        Checkpoint {
            step: self.step,
            sample_seed: subject.sample_seed,
            sample_count: subject.len() as u64,
            base_scale: subject.base_scale,
            features: self.features.clone(),
            net: self.net.clone(),
            corrections: self.corrections.clone(),
            moments: self.moments.clone(),
        }
    }

    /// Restores a state; the loss history is not part of a checkpoint.
    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let state = TrainState { features: ck.features, net: ck.net, corrections: ck.corrections, moments: ck.moments, step: ck.step, history: Vec::new() };
        state.check_shapes()?;
        Ok(state)
    }
}

/// Canonical Gaussians decoded from the current parameters.
pub fn canonical_gaussians<T: Real>(subject: &Subject<T>, features: &FeatureTensor<T>, net: &DecoderNet<T>) -> Result<GaussianSet<T>> {
    let decoded = decode(features, &subject.posmap, net)?;
    assemble(&subject.surface, &decoded, subject.base_scale)
}

/// Gaussians posed for `body` (including its corrections).
pub fn posed_gaussians<T: Real>(subject: &Subject<T>, canonical: &GaussianSet<T>, body: &BodyState<T>) -> Result<GaussianSet<T>> {
    repose(canonical, &subject.samples, body, &subject.template)
}

/// Renders frame `index` of the training set with its learned correction.
pub fn render_training_frame<T: Real>(
    subject: &Subject<T>,
    state: &TrainState<T>,
    frame: &TrainFrame<T>,
    index: usize,
    background: Vec3<T>,
) -> Result<Image<T>> {
    let canonical = canonical_gaussians(subject, &state.features, &state.net)?;
    let correction = state.corrections.get(index).ok_or_else(|| invalid(format!("no correction for frame {index}")))?;
    let posed = posed_gaussians(subject, &canonical, &with_correction(&frame.body, correction))?;
    Ok(render_image(&posed, &frame.camera, background))
}

/// Gradient of the objective with respect to every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub features: Vec<T>,
    pub net: DecoderGradients<T>,
    /// `(frame, dΔθ, dΔt)` for each frame in the batch, in batch order.
    pub motion: Vec<(usize, Vec<Vec3<T>>, Vec3<T>)>,
}

fn check_finite(terms: &LossTerms, step: u64) -> Result<()> {
    let vals = [terms.rgb, terms.ssim, terms.lpips, terms.offset, terms.scale, terms.feature];
    if vals.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(Error::Numerical(format!(
        "non-finite loss at step {step}: rgb={} ssim={} lpips={} offset={} scale={} feature={}",
        terms.rgb, terms.ssim, terms.lpips, terms.offset, terms.scale, terms.feature
    )))
}

/// Objective over the frames in `batch` and its gradient.
///
/// The photometric terms are averaged over the batch; the regularizers are
/// evaluated once on the shared decoded parameters.
pub fn objective<T: Real>(
    subject: &Subject<T>,
    state: &TrainState<T>,
    frames: &[TrainFrame<T>],
    batch: &[usize],
    config: &TrainConfig,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<(LossBreakdown, Gradients<T>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= frames.len() || i >= state.corrections.len()) {
        return Err(invalid(format!("batch frame {i} out of range")));
    }
    let w = &config.weights;
    let bg = config.background::<T>();
    let (decoded, cache) = decode_with_cache(&state.features, &subject.posmap, &state.net)?;
    let canonical = assemble(&subject.surface, &decoded, subject.base_scale)?;
    let n = canonical.len();
    let inv_b = lit::<T>(1.0 / batch.len() as f64);

    let mut terms = LossTerms::default();
    let mut d_centers = vec![zero3::<T>(); n];
    let mut d_colors = vec![zero3::<T>(); n];
    let mut d_scales = vec![zero3::<T>(); n];
    let mut motion = Vec::with_capacity(batch.len());
    for &i in batch {
        let frame = &frames[i];
        let body = with_correction(&frame.body, &state.corrections[i]);
        let posed = repose(&canonical, &subject.samples, &body, &subject.template)?;
        let out = rasterize(&posed, &frame.camera, bg);
        let (t, mut d_img) = photometric_with_grad(&out.image, &frame.image, w, extractor)?;
        terms.rgb += t.rgb / batch.len() as f64;
        terms.ssim += t.ssim / batch.len() as f64;
        terms.lpips += t.lpips / batch.len() as f64;
        for v in &mut d_img.data {
            *v *= inv_b;
        }
        let g = render_backward(&out, &d_img)?;
        let r = repose_backward(&canonical, &subject.samples, &body, &subject.template, &g.centers)?;
        for k in 0..n {
            for c in 0..3 {
                d_centers[k][c] += r.centers[k][c];
                d_colors[k][c] += g.colors[k][c];
                d_scales[k][c] += g.scales[k][c];
            }
        }
        motion.push((i, r.delta_theta, r.delta_translation));
    }

    terms.offset = reg_offset(&decoded.offsets)?.as_f64();
    terms.scale = reg_scale(&decoded.scales)?.as_f64();
    terms.feature = reg_feature(&state.features.values)?.as_f64();
    check_finite(&terms, state.step)?;
    let breakdown = total_loss(terms, w)?;

    let mut d_decoded = assemble_backward(&canonical, &d_centers, &d_colors, &d_scales);
    let (lo, ls, lf) = (lit::<T>(w.offset), lit::<T>(w.scale), lit::<T>(w.feature));
    for (d, g) in d_decoded.offsets.iter_mut().zip(reg_offset_grad(&decoded.offsets)) {
        for c in 0..3 {
            d[c] += lo * g[c];
        }
    }
    for (d, g) in d_decoded.scales.iter_mut().zip(mean_square_grad(&decoded.scales)) {
        *d += ls * g;
    }
    let (mut g_feat, g_net) = decode_backward(&state.features, &subject.posmap, &state.net, &cache, &d_decoded)?;
    for (d, g) in g_feat.values.iter_mut().zip(mean_square_grad(&state.features.values)) {
        *d += lf * g;
    }
    Ok((breakdown, Gradients { features: g_feat.values, net: g_net, motion }))
}

/// One optimizer step over `batch`.
pub fn train_step<T: Real>(
    subject: &Subject<T>,
    state: &mut TrainState<T>,
    frames: &[TrainFrame<T>],
    batch: &[usize],
    config: &TrainConfig,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossBreakdown> {
    state.check_shapes()?;
    let (loss, grads) = objective(subject, state, frames, batch, config, extractor)?;
    if !loss.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite total loss at step {}: {loss:?}", state.step)));
    }
    let lr = config.learning_rate;
    adam_step(&mut state.features.values, &grads.features, &mut state.moments[0], lr);
    for (l, layer) in state.net.layers.iter_mut().enumerate() {
        adam_step(&mut layer.weights, &grads.net.weights[l], &mut state.moments[1 + 2 * l], lr);
        adam_step(&mut layer.bias, &grads.net.bias[l], &mut state.moments[2 + 2 * l], lr);
    }
    if state.step >= config.motion_delay {
        for (frame, d_theta, d_trans) in &grads.motion {
            let (theta, trans) = &state.corrections[*frame];
            let mut flat: Vec<T> = theta.iter().flatten().copied().collect();
            flat.extend_from_slice(trans);
            let mut grad: Vec<T> = d_theta.iter().flatten().copied().collect();
            grad.extend_from_slice(d_trans);
            let buf = state.motion_buffer(*frame);
            adam_step(&mut flat, &grad, &mut state.moments[buf], config.motion_learning_rate);
            let c = &mut state.corrections[*frame];
            for (j, v) in c.0.iter_mut().enumerate() {
                *v = [flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]];
            }
            let k = flat.len() - 3;
            c.1 = [flat[k], flat[k + 1], flat[k + 2]];
        }
    }
    state.step += 1;
    state.history.push(LossRecord { step: state.step, loss });
    Ok(loss)
}

/// Hooks called while fitting.
pub trait FitObserver<T> {
    fn after_step(&mut self, _state: &TrainState<T>, _loss: &LossBreakdown) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_interval` steps.
    fn checkpoint(&mut self, _state: &TrainState<T>) -> Result<()> {
        Ok(())
    }
}

impl<T> FitObserver<T> for () {}

/// Batches for every step of a run, in order. Each epoch visits the frames in
/// a fresh seeded shuffle.
pub fn schedule(frames: usize, config: &TrainConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SHUFFLE_SEED_OFFSET));
    let mut out = Vec::with_capacity(config.total_steps(frames) as usize);
    let mut order: Vec<usize> = (0..frames).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        out.extend(order.chunks(config.batch_size).map(|c| c.to_vec()));
    }
    out
}

/// Runs the remaining steps of the schedule. A state restored from a
/// checkpoint resumes where it stopped.
pub fn fit<T: Real>(
    subject: &Subject<T>,
    frames: &[TrainFrame<T>],
    config: &TrainConfig,
    extractor: &dyn FeatureExtractor<T>,
    mut state: TrainState<T>,
    observer: &mut dyn FitObserver<T>,
) -> Result<TrainState<T>> {
    config.validate()?;
    if frames.len() != state.corrections.len() {
        return Err(invalid(format!("{} frames but the state tracks {}", frames.len(), state.corrections.len())));
    }
    if frames.is_empty() {
        return Err(invalid("no training frames"));
    }
    for batch in schedule(frames.len(), config).into_iter().skip(state.step as usize) {
        let loss = train_step(subject, &mut state, frames, &batch, config, extractor)?;
        observer.after_step(&state, &loss)?;
        if config.checkpoint_interval > 0 && state.step.is_multiple_of(config.checkpoint_interval) {
            observer.checkpoint(&state)?;
        }
    }
    Ok(state)
}

pub const LOSS_CSV_HEADER: &str = "step,rgb,ssim,lpips,offset,scale,feature,total";

pub fn format_loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in history {
        let t = &r.loss.terms;
        let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.step, t.rgb, t.ssim, t.lpips, t.offset, t.scale, t.feature, r.loss.total);
    }
    s
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    std::fs::write(path, format_loss_csv(history))?;
    Ok(())
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOSS_CSV_HEADER) {
        return Err(Error::Parse { path: "loss csv".into(), line: 1, message: format!("expected header `{LOSS_CSV_HEADER}`") });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = |m: &str| Error::Parse { path: "loss csv".into(), line: n + 2, message: m.to_string() };
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 8 {
                return Err(bad("expected 8 columns"));
            }
            let step = f[0].parse::<u64>().map_err(|_| bad("bad step"))?;
            let v: Vec<f64> = f[1..].iter().map(|x| x.parse::<f64>().map_err(|_| bad("bad number"))).collect::<Result<_>>()?;
            let terms = LossTerms { rgb: v[0], ssim: v[1], lpips: v[2], offset: v[3], scale: v[4], feature: v[5] };
            Ok(LossRecord { step, loss: LossBreakdown { terms, total: v[6] } })
        })
        .collect()
}

/// Human-readable record of a run: the resolved configuration plus asset
/// hashes, as TOML.
pub fn run_manifest(model: &ModelConfig, train: &TrainConfig, assets: &[(String, String)]) -> Result<String> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        model: &'a ModelConfig,
        train: &'a TrainConfig,
        assets: std::collections::BTreeMap<&'a str, &'a str>,
    }
    let m = Manifest { model, train, assets: assets.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect() };
    toml::to_string(&m).map_err(|e| invalid(format!("cannot serialize run manifest: {e}")))
}

#[cfg(test)]
mod tests;
