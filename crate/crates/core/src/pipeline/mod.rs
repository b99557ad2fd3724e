//! File-level orchestration behind the command-line tool: augment the source
//! frames, fit a model, render, evaluate and export.
//!
//! Every command validates its whole input (config, assets, frames,
//! checkpoint) before it creates a directory or writes a file. Commands take
//! a lock file in the output directory for their duration.
//!
//! Output layout under `paths.output`:
//!
//! ```text
//! augmented/  frame_*.png, manifest.txt, cameras.txt, poses.txt
//! model/      checkpoint.osck, loss.csv, run_manifest.toml,
//!             checkpoints/step_*.osck, train_renders/frame_*.png
//! renders/    cmd_render output
//! eval/       report.txt
//! export/     *.ply
//! ```

mod config;

pub use config::{apply_override, default_eval_views, BodyConfig, EvalConfig, EvalView, OrbitConfig, PathsConfig, PerceptualConfig, PipelineConfig};

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::{
    augment_video_with, augmented_origins, format_manifest, frame_name, list_frames, parse_manifest, read_frames, write_frames, BicubicUpscaler,
    FlowInterpolator, FrameInterpolator, FrameOrigin, NoUpscale, SuperResolver, VideoSequence,
};
use crate::body::{capsule_person, load_template, read_pose_file, write_pose_file, BodyState, FramePose, TemplateBody};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{read_checkpoint, write_checkpoint, write_ply, Checkpoint};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::loss::{lpips, psnr, ssim, write_metric_report, ConvPyramid, FeatureExtractor, LossBreakdown, MetricRow};
use crate::orbit::{read_poses, write_poses, CameraPose};
use crate::scalar::{lit, Real};
use crate::train::{
    canonical_gaussians, fit, parse_loss_csv, posed_gaussians, render_training_frame, run_manifest, with_correction, write_loss_csv, FitObserver, Subject,
    TrainFrame, TrainState,
};
use crate::Scalar;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

/// Worker thread count.
pub const THREADS_ENV: &str = "ORBIT_SPLAT_THREADS";
/// Any value other than empty or `0` forces a single worker thread.
pub const DETERMINISTIC_ENV: &str = "ORBIT_SPLAT_DETERMINISTIC";

/// Thread count requested through the environment, if any.
pub fn threads_from_env(threads: Option<&str>, deterministic: Option<&str>) -> Result<Option<usize>> {
    if deterministic.is_some_and(|v| !v.is_empty() && v != "0") {
        return Ok(Some(1));
    }
    match threads {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Sizes the global worker pool from the environment. Returns the thread
/// count in effect.
pub fn configure_threads() -> Result<usize> {
    let t = std::env::var(THREADS_ENV).ok();
    let d = std::env::var(DETERMINISTIC_ENV).ok();
    if let Some(n) = threads_from_env(t.as_deref(), d.as_deref())? {
        // Fails only if the pool already exists, in which case it stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Paths of everything the pipeline writes.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }
    pub fn augmented(&self) -> PathBuf {
        self.root.join("augmented")
    }
    pub fn manifest(&self) -> PathBuf {
        self.augmented().join("manifest.txt")
    }
    pub fn cameras(&self) -> PathBuf {
        self.augmented().join("cameras.txt")
    }
    pub fn poses(&self) -> PathBuf {
        self.augmented().join("poses.txt")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.model().join("checkpoint.osck")
    }
    pub fn loss_csv(&self) -> PathBuf {
        self.model().join("loss.csv")
    }
    pub fn run_manifest(&self) -> PathBuf {
        self.model().join("run_manifest.toml")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.model().join("checkpoints")
    }
    pub fn train_renders(&self) -> PathBuf {
        self.model().join("train_renders")
    }
    pub fn renders(&self) -> PathBuf {
        self.root.join("renders")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval").join("report.txt")
    }
    pub fn export(&self) -> PathBuf {
        self.root.join("export")
    }
}

pub const LOCK_FILE: &str = ".orbit-splat.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::State(format!("{} is locked by another run; remove {} if that run is gone", dir.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash over the contents of several files, in order.
fn sha256_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// The body template and a hash identifying it.
pub fn load_body(cfg: &PipelineConfig) -> Result<(TemplateBody<Scalar>, String)> {
    match &cfg.body.asset {
        Some(p) => Ok((load_template(p)?, sha256_file(p)?)),
        None => Ok((capsule_person(), "builtin:capsule_person".into())),
    }
}

fn shape<T: Real>(cfg: &PipelineConfig, template: &TemplateBody<T>) -> Result<Vec<T>> {
    let beta: Vec<T> = if cfg.body.beta.is_empty() { vec![T::zero(); template.shape_dim()] } else { cfg.body.beta.iter().map(|&b| lit(b)).collect() };
    template.check_beta(&beta)?;
    Ok(beta)
}

fn state_from_pose<T: Real>(template: &TemplateBody<T>, beta: &[T], p: &FramePose<T>) -> Result<BodyState<T>> {
    BodyState::new(template, p.theta.clone(), beta.to_vec(), p.translation)
}

/// Body state of each of the `n` source frames.
pub fn source_bodies<T: Real>(cfg: &PipelineConfig, template: &TemplateBody<T>, n: usize) -> Result<Vec<BodyState<T>>> {
    let beta = shape(cfg, template)?;
    match &cfg.body.poses {
        None => Ok((0..n).map(|_| BodyState { beta: beta.clone(), ..BodyState::rest(template) }).collect()),
        Some(path) => {
            let poses = read_pose_file(BufReader::new(File::open(path)?), &path.display().to_string(), template.joint_count())?;
            if poses.len() != n {
                return Err(invalid(format!("{} has {} poses for {n} source frames", path.display(), poses.len())));
            }
            poses.iter().map(|p| state_from_pose(template, &beta, p)).collect()
        }
    }
}

/// Pose at a fractional position of the source timeline, linear in the
/// axis-angle parameters and translation.
fn pose_at<T: Real>(bodies: &[BodyState<T>], o: &FrameOrigin, index: usize) -> FramePose<T> {
    let a = &bodies[o.source - 1];
    if o.is_original() {
        return FramePose { index, theta: a.theta.clone(), translation: a.translation };
    }
    let b = &bodies[o.source];
    let t = lit::<T>(o.t);
    let lerp = |x: Vec3<T>, y: Vec3<T>| [0, 1, 2].map(|k| x[k] + t * (y[k] - x[k]));
    FramePose { index, theta: a.theta.iter().zip(&b.theta).map(|(x, y)| lerp(*x, *y)).collect(), translation: lerp(a.translation, b.translation) }
}

/// Camera of an augmented frame: the orbit azimuth at its timeline position.
fn camera_at<T: Real>(cfg: &PipelineConfig, sources: usize, o: &FrameOrigin, size: (usize, usize)) -> Result<CameraPose<T>> {
    let o_cfg = &cfg.orbit;
    let azimuth = o.position() * 360.0 / sources as f64;
    CameraPose::look_at_origin(lit(azimuth), lit(o_cfg.elevation), lit(o_cfg.radius), lit(o_cfg.fov), size.0, size.1)
}

/// Perceptual feature extractor used for training and evaluation.
pub fn feature_extractor(cfg: &PipelineConfig) -> Result<ConvPyramid<Scalar>> {
    match &cfg.perceptual.weights {
        Some(p) => ConvPyramid::load(p),
        None => Ok(ConvPyramid::random(cfg.perceptual.seed)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSummary {
    pub sources: usize,
    pub frames: usize,
    pub interpolated: usize,
    pub resolution: (usize, usize),
}

/// Super-resolves and interpolates the source frames into `augmented/`,
/// with per-frame cameras, body poses and a manifest of origins.
pub fn cmd_augment(cfg: &PipelineConfig) -> Result<AugmentSummary> {
    cfg.validate()?;
    let (template, _) = load_body(cfg)?;
    let sources: Vec<Image<Scalar>> = read_frames(&cfg.paths.frames)?;
    let n = sources.len();
    if n < 2 {
        return Err(invalid(format!("{} holds {n} frame(s); at least 2 are needed", cfg.paths.frames.display())));
    }
    let video = VideoSequence::new(sources)?;
    let (w, h) = video.resolution();
    if cfg.augment.super_resolution && w != h {
        return Err(invalid(format!("super-resolution needs square frames, got {w}×{h}")));
    }
    let bodies = source_bodies(cfg, &template, n)?;

    let layout = Layout::new(&cfg.paths.output);
    let _lock = OutputLock::acquire(&layout.root)?;
    let sr: Box<dyn SuperResolver<Scalar>> = if cfg.augment.super_resolution {
        Box::new(BicubicUpscaler { factor: cfg.augment.upsample_factor, target: cfg.augment.target_size })
    } else {
        Box::new(NoUpscale)
    };
    let (frames, origins) = if cfg.augment.interpolation {
        (augment_video_with(&video, sr.as_ref(), &FlowInterpolator { params: cfg.augment.flow })?, augmented_origins(n))
    } else {
        (augment_video_with(&video, sr.as_ref(), &NoInterpolation)?, (1..=n).map(|s| FrameOrigin { source: s, t: 0.0 }).collect())
    };
    let resolution = frames.resolution();
    let frames = frames.into_frames();

    let dir = layout.augmented();
    if dir.exists() {
        for stale in list_frames(&dir)? {
            fs::remove_file(stale)?;
        }
    }
    write_frames(&dir, &frames)?;
    fs::write(layout.manifest(), format_manifest(&origins))?;
    let cameras: Vec<CameraPose<Scalar>> = origins.iter().map(|o| camera_at(cfg, n, o, resolution)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    write_poses(&mut out, &cameras)?;
    fs::write(layout.cameras(), out)?;
    let poses: Vec<FramePose<Scalar>> = origins.iter().enumerate().map(|(i, o)| pose_at(&bodies, o, i)).collect();
    let mut out = Vec::new();
    write_pose_file(&mut out, &poses)?;
    fs::write(layout.poses(), out)?;
    log::info!("augmented {n} frames to {} at {}×{}", frames.len(), resolution.0, resolution.1);
    Ok(AugmentSummary { sources: n, frames: frames.len(), interpolated: origins.iter().filter(|o| !o.is_original()).count(), resolution })
}

/// Interpolator for runs with interpolation disabled: gaps stay empty.
struct NoInterpolation;

impl<T: Real> FrameInterpolator<T> for NoInterpolation {
    fn interpolate(&self, _f0: &Image<T>, _f1: &Image<T>, _times: &[f64]) -> Result<Vec<Image<T>>> {
        Ok(Vec::new())
    }
}

/// The augmented training set written by [`cmd_augment`].
pub struct TrainingSet {
    pub frames: Vec<TrainFrame<Scalar>>,
    pub origins: Vec<FrameOrigin>,
    /// Content hash of the frame files.
    pub hash: String,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}; run `augment` first", path.display())))
}

pub fn load_training_set(cfg: &PipelineConfig, template: &TemplateBody<Scalar>) -> Result<TrainingSet> {
    let layout = Layout::new(&cfg.paths.output);
    let manifest = parse_manifest(&read_text(&layout.manifest())?)?;
    let dir = layout.augmented();
    let paths = list_frames(&dir)?;
    let names: Vec<String> = paths.iter().filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from)).collect();
    let listed: Vec<&String> = manifest.iter().map(|(n, _)| n).collect();
    if names.iter().collect::<Vec<_>>() != listed {
        return Err(invalid(format!("{} does not match the frames in {}", layout.manifest().display(), dir.display())));
    }
    let images = read_frames::<Scalar>(&dir)?;
    let cameras_path = layout.cameras();
    let cameras = read_poses(BufReader::new(File::open(&cameras_path)?), &cameras_path.display().to_string())?;
    let poses_path = layout.poses();
    let poses = read_pose_file::<Scalar>(BufReader::new(File::open(&poses_path)?), &poses_path.display().to_string(), template.joint_count())?;
    let beta = shape(cfg, template)?;
    let bodies = poses.iter().map(|p| state_from_pose(template, &beta, p)).collect::<Result<Vec<_>>>()?;
    let frames = TrainFrame::zip(images, cameras, bodies)?;
    Ok(TrainingSet { frames, origins: manifest.into_iter().map(|(_, o)| o).collect(), hash: sha256_files(&paths)? })
}

fn check_compatible(ck: &Checkpoint<Scalar>, subject: &Subject<Scalar>, cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let m = &cfg.model;
    let bad = |what: String| invalid(format!("checkpoint {} does not match the config: {what}", path.display()));
    if ck.sample_seed != m.sample_seed || ck.sample_count != subject.len() as u64 {
        return Err(bad(format!("samples {} seed {} vs {} seed {}", ck.sample_count, ck.sample_seed, subject.len(), m.sample_seed)));
    }
    if ck.features.resolution() != (subject.posmap.rows, subject.posmap.cols) || ck.features.channels != m.feature_channels {
        return Err(bad("feature tensor shape".into()));
    }
    if ck.net.widths() != m.decoder_widths() {
        return Err(bad(format!("decoder widths {:?} vs {:?}", ck.net.widths(), m.decoder_widths())));
    }
    if ck.corrections.iter().any(|c| c.0.len() != subject.template.joint_count()) {
        return Err(bad("joint count of the motion corrections".into()));
    }
    Ok(())
}

/// Subject from the config plus the state stored in `path`.
pub fn load_model(cfg: &PipelineConfig, path: &Path) -> Result<(Subject<Scalar>, TrainState<Scalar>)> {
    let (template, _) = load_body(cfg)?;
    let beta = shape(cfg, &template)?;
    let subject = Subject::new(template, beta, &cfg.model)?;
    let ck = read_checkpoint::<Scalar>(path)?;
    check_compatible(&ck, &subject, cfg, path)?;
    Ok((subject, TrainState::from_checkpoint(ck)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub steps: u64,
    pub final_loss: Option<LossBreakdown>,
    pub checkpoint: PathBuf,
}

struct FileObserver {
    dir: PathBuf,
    subject_seed: u64,
    subject_count: u64,
    base_scale: Scalar,
    total: u64,
}

impl FitObserver<Scalar> for FileObserver {
    fn after_step(&mut self, state: &TrainState<Scalar>, loss: &LossBreakdown) -> Result<()> {
        if state.step.is_multiple_of(100) || state.step == self.total {
            log::info!("step {}/{} loss {:.6}", state.step, self.total, loss.total);
        }
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainState<Scalar>) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let ck = Checkpoint {
            step: state.step,
            sample_seed: self.subject_seed,
            sample_count: self.subject_count,
            base_scale: self.base_scale,
            features: state.features.clone(),
            net: state.net.clone(),
            corrections: state.corrections.clone(),
            moments: state.moments.clone(),
        };
        write_checkpoint(&self.dir.join(format!("step_{:06}.osck", state.step)), &ck)
    }
}

/// Fits the model to the augmented frames. With `resume`, training continues
/// from that checkpoint and the loss history up to its step is kept from the
/// existing loss CSV.
pub fn cmd_fit(cfg: &PipelineConfig, resume: Option<&Path>) -> Result<FitSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.output);
    let (template, body_hash) = load_body(cfg)?;
    let set = load_training_set(cfg, &template)?;
    let beta = shape(cfg, &template)?;
    let subject = Subject::new(template, beta, &cfg.model)?;
    let extractor = feature_extractor(cfg)?;
    let state = match resume {
        None => TrainState::new(&subject, &cfg.model, set.frames.len(), cfg.train.seed)?,
        Some(path) => {
            let ck = read_checkpoint::<Scalar>(path)?;
            check_compatible(&ck, &subject, cfg, path)?;
            if ck.corrections.len() != set.frames.len() {
                return Err(invalid(format!("checkpoint tracks {} frames, the training set has {}", ck.corrections.len(), set.frames.len())));
            }
            let mut state = TrainState::from_checkpoint(ck)?;
            if let Ok(text) = fs::read_to_string(layout.loss_csv()) {
                state.history = parse_loss_csv(&text)?.into_iter().filter(|r| r.step <= state.step).collect();
            }
            state
        }
    };
    let mut assets = vec![("body".to_string(), body_hash), ("frames".to_string(), set.hash.clone())];
    for (name, p) in [("cameras", layout.cameras()), ("poses", layout.poses())] {
        assets.push((name.to_string(), sha256_file(&p)?));
    }
    if let Some(p) = &cfg.perceptual.weights {
        assets.push(("perceptual".into(), sha256_file(p)?));
    }
    let manifest = run_manifest(&cfg.model, &cfg.train, &assets)?;

    let _lock = OutputLock::acquire(&layout.root)?;
    fs::create_dir_all(layout.model())?;
    fs::write(layout.run_manifest(), &manifest)?;
    let total = cfg.train.total_steps(set.frames.len());
    let mut observer = FileObserver {
        dir: layout.checkpoints(),
        subject_seed: subject.sample_seed,
        subject_count: subject.len() as u64,
        base_scale: subject.base_scale,
        total,
    };
    let state = fit(&subject, &set.frames, &cfg.train, &extractor as &dyn FeatureExtractor<Scalar>, state, &mut observer)?;
    write_checkpoint(&layout.checkpoint(), &state.to_checkpoint(&subject))?;
    write_loss_csv(&layout.loss_csv(), &state.history)?;
    let bg = cfg.train.background.map(lit::<Scalar>);
    let renders = layout.train_renders();
    fs::create_dir_all(&renders)?;
    for (i, frame) in set.frames.iter().enumerate() {
        render_training_frame(&subject, &state, frame, i, bg)?.save_png(&renders.join(frame_name(i + 1)))?;
    }
    Ok(FitSummary { steps: state.step, final_loss: state.history.last().map(|r| r.loss), checkpoint: layout.checkpoint() })
}

/// Which views [`cmd_render`] produces.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewSpec {
    /// `n` evenly spaced azimuths from 0, like the source orbit.
    Orbit(usize),
    /// Explicit azimuths in degrees.
    Azimuths(Vec<f64>),
    /// Training frames (1-based), with their learned motion correction.
    TrainingFrames(Vec<usize>),
}

/// Resolution of novel views: that of the augmented frames if present,
/// otherwise the configured target size.
pub fn render_resolution(cfg: &PipelineConfig) -> Result<(usize, usize)> {
    let path = Layout::new(&cfg.paths.output).cameras();
    if let Ok(f) = File::open(&path) {
        if let Some(c) = read_poses::<Scalar>(BufReader::new(f), &path.display().to_string())?.first() {
            return Ok((c.width, c.height));
        }
    }
    Ok((cfg.augment.target_size, cfg.augment.target_size))
}

/// Body used for novel views: the first source pose, uncorrected.
pub fn reference_body(cfg: &PipelineConfig, template: &TemplateBody<Scalar>) -> Result<BodyState<Scalar>> {
    let beta = shape(cfg, template)?;
    match &cfg.body.poses {
        None => Ok(BodyState { beta, ..BodyState::rest(template) }),
        Some(path) => {
            let poses = read_pose_file(BufReader::new(File::open(path)?), &path.display().to_string(), template.joint_count())?;
            let first = poses.first().ok_or_else(|| invalid(format!("{} is empty", path.display())))?;
            state_from_pose(template, &beta, first)
        }
    }
}

fn novel_camera(cfg: &PipelineConfig, azimuth: f64, size: (usize, usize)) -> Result<CameraPose<Scalar>> {
    let o = &cfg.orbit;
    CameraPose::look_at_origin(lit(azimuth), lit(o.elevation), lit(o.radius), lit(o.fov), size.0, size.1)
}

/// Renders views of a fitted model to PNG files in `out` (default
/// `renders/`). Returns the written paths.
pub fn cmd_render(cfg: &PipelineConfig, checkpoint: Option<&Path>, views: &ViewSpec, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.output);
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let (subject, state) = load_model(cfg, &ck_path)?;
    let bg = cfg.train.background.map(lit::<Scalar>);
    let size = render_resolution(cfg)?;
    let mut jobs: Vec<(String, CameraPose<Scalar>, BodyState<Scalar>)> = Vec::new();
    match views {
        ViewSpec::Orbit(_) | ViewSpec::Azimuths(_) => {
            let azimuths: Vec<f64> = match views {
                ViewSpec::Orbit(n) if *n == 0 => return Err(invalid("--orbit needs at least one view")),
                ViewSpec::Orbit(n) => (0..*n).map(|k| k as f64 * 360.0 / *n as f64).collect(),
                ViewSpec::Azimuths(a) => a.clone(),
                ViewSpec::TrainingFrames(_) => unreachable!(),
            };
            let body = reference_body(cfg, &subject.template)?;
            for (k, a) in azimuths.iter().enumerate() {
                if !a.is_finite() {
                    return Err(invalid(format!("azimuth {a} is not finite")));
                }
                let name = match views {
                    ViewSpec::Orbit(_) => format!("orbit_{:03}.png", k + 1),
                    _ => format!("azimuth_{a:07.2}.png"),
                };
                jobs.push((name, novel_camera(cfg, *a, size)?, body.clone()));
            }
        }
        ViewSpec::TrainingFrames(list) => {
            let set = load_training_set(cfg, &subject.template)?;
            if set.frames.len() != state.corrections.len() {
                return Err(invalid(format!("checkpoint tracks {} frames, the training set has {}", state.corrections.len(), set.frames.len())));
            }
            for &k in list {
                if k == 0 || k > set.frames.len() {
                    return Err(invalid(format!("training frame {k} is outside 1..={}", set.frames.len())));
                }
                let f = &set.frames[k - 1];
                jobs.push((frame_name(k), f.camera.clone(), with_correction(&f.body, &state.corrections[k - 1])));
            }
        }
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| layout.renders());
    let _lock = OutputLock::acquire(&layout.root)?;
    fs::create_dir_all(&dir)?;
    let canonical = canonical_gaussians(&subject, &state.features, &state.net)?;
    let mut written = Vec::with_capacity(jobs.len());
    for (name, camera, body) in jobs {
        let posed = posed_gaussians(&subject, &canonical, &body)?;
        let path = dir.join(name);
        crate::render::render_image(&posed, &camera, bg).save_png(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Renders each configured evaluation view at the resolution of its ground
/// truth, compares it with `<ground truth>/<view>.png` and writes the metric
/// report.
pub fn cmd_eval(cfg: &PipelineConfig, checkpoint: Option<&Path>, ground_truth: Option<&Path>) -> Result<(Vec<MetricRow>, PathBuf)> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.output);
    let gt_dir = ground_truth
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.ground_truth.clone())
        .ok_or_else(|| invalid("no ground-truth directory: set eval.ground_truth or pass one"))?;
    let mut targets = Vec::new();
    for v in &cfg.eval.views {
        let p = gt_dir.join(format!("{}.png", v.name));
        if !p.is_file() {
            return Err(invalid(format!("ground truth for view `{}` is missing: {}", v.name, p.display())));
        }
        targets.push(Image::<Scalar>::load_png(&p)?);
    }
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let (subject, state) = load_model(cfg, &ck_path)?;
    let extractor = if cfg.eval.lpips { Some(feature_extractor(cfg)?) } else { None };
    let body = reference_body(cfg, &subject.template)?;

    let _lock = OutputLock::acquire(&layout.root)?;
    let bg = cfg.train.background.map(lit::<Scalar>);
    let canonical = canonical_gaussians(&subject, &state.features, &state.net)?;
    let posed = posed_gaussians(&subject, &canonical, &body)?;
    let mut rows = Vec::new();
    for (v, target) in cfg.eval.views.iter().zip(&targets) {
        let camera = novel_camera(cfg, v.azimuth, (target.width, target.height))?;
        // Score the 8-bit image `render` would write, not the float one.
        let float = crate::render::render_image(&posed, &camera, bg);
        let render = Image::from_rgb8(float.width, float.height, &float.to_rgb8());
        let lp = match &extractor {
            Some(e) => Some(lpips(&render, target, e as &dyn FeatureExtractor<Scalar>)?.as_f64()),
            None => None,
        };
        rows.push(MetricRow {
            view: v.name.clone(),
            azimuth_deg: Some(v.azimuth),
            psnr: psnr(&render, target)?,
            ssim: ssim(&render, target)?.as_f64(),
            lpips: lp,
        });
    }
    let path = layout.eval_report();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_metric_report(&path, &rows)?;
    Ok((rows, path))
}

/// Writes the model's Gaussians as PLY: canonical, or posed as training
/// frame `frame` (1-based, with its correction).
pub fn cmd_export(cfg: &PipelineConfig, checkpoint: Option<&Path>, frame: Option<usize>, out: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.output);
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let (subject, state) = load_model(cfg, &ck_path)?;
    let body = match frame {
        None => None,
        Some(k) => {
            let set = load_training_set(cfg, &subject.template)?;
            if k == 0 || k > set.frames.len() || k > state.corrections.len() {
                return Err(invalid(format!("training frame {k} is outside 1..={}", set.frames.len().min(state.corrections.len()))));
            }
            Some(with_correction(&set.frames[k - 1].body, &state.corrections[k - 1]))
        }
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| {
        layout.export().join(match frame {
            None => "canonical.ply".to_string(),
            Some(k) => format!("frame_{k:04}.ply"),
        })
    });

    let _lock = OutputLock::acquire(&layout.root)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let canonical = canonical_gaussians(&subject, &state.features, &state.net)?;
    let g = match &body {
        None => canonical,
        Some(b) => posed_gaussians(&subject, &canonical, b)?,
    };
    write_ply(&path, &g)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
        assert_eq!(exit_code(&invalid("x")), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::CheckpointVersion { expected: 1, found: 2 }), EXIT_VALIDATION);
    }

    #[test]
    fn thread_environment() {
        assert_eq!(threads_from_env(None, None).unwrap(), None);
        assert_eq!(threads_from_env(Some("3"), None).unwrap(), Some(3));
        assert_eq!(threads_from_env(Some("3"), Some("1")).unwrap(), Some(1));
        assert_eq!(threads_from_env(None, Some("0")).unwrap(), None);
        assert!(threads_from_env(Some("zero"), None).is_err());
        assert!(threads_from_env(Some("0"), None).is_err());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::State(_))));
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn interpolated_poses_are_linear() {
        let t = capsule_person::<f64>();
        let mut a = BodyState::rest(&t);
        let mut b = BodyState::rest(&t);
        a.theta[3] = [0.2, 0.0, 0.0];
        b.theta[3] = [0.6, 0.0, 0.0];
        b.translation = [0.0, 1.0, 0.0];
        let p = pose_at(&[a, b], &FrameOrigin { source: 1, t: 0.25 }, 2);
        assert!((p.theta[3][0] - 0.3).abs() < 1e-12);
        assert!((p.translation[1] - 0.25).abs() < 1e-12);
        assert_eq!(p.index, 2);
    }

    #[test]
    fn augmented_cameras_follow_the_orbit() {
        let cfg = PipelineConfig::default();
        let c: CameraPose<f64> = camera_at(&cfg, 21, &FrameOrigin { source: 2, t: 0.5 }, (64, 64)).unwrap();
        assert!((c.azimuth - 1.5 * 360.0 / 21.0).abs() < 1e-12);
        assert_eq!((c.width, c.height), (64, 64));
    }
}
