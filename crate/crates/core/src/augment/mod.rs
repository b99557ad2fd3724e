//! Video augmentation: per-frame super-resolution followed by temporal
//! densification with flow-based frame interpolation.
//!
//! `n` source frames become `n + 3(n − 1)`: every original keeps its slot at
//! a multiple of 4 and each gap receives frames at t = 0.25, 0.5, 0.75.
//! There is no wrap-around gap between the last frame and the first.
//!
//! The two stages sit behind [`SuperResolver`] and [`FrameInterpolator`];
//! the classical defaults are [`BicubicUpscaler`] and [`FlowInterpolator`].

mod flow;
mod resample;

pub use flow::{estimate_flow, interpolate_frame, FlowField, FlowParams};
pub use resample::{resize_bicubic, upsample_resize};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::scalar::Real;

/// Interpolation times inserted into every gap.
pub const GAP_TIMES: [f64; 3] = [0.25, 0.5, 0.75];

/// Output frame count for `n` inputs.
pub fn augmented_len(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        n + GAP_TIMES.len() * (n - 1)
    }
}

/// An ordered run of equally sized frames, at least two long.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence<T> {
    frames: Vec<Image<T>>,
}

impl<T: Real> VideoSequence<T> {
    pub fn new(frames: Vec<Image<T>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(invalid(format!("a video needs at least 2 frames, got {}", frames.len())));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if let Some(i) = frames.iter().position(|f| f.width != w || f.height != h) {
            return Err(invalid(format!("frame {i} is {}×{}, expected {w}×{h}", frames[i].width, frames[i].height)));
        }
        Ok(VideoSequence { frames })
    }

    pub fn frames(&self) -> &[Image<T>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Image<T>> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.frames[0].width, self.frames[0].height)
    }
}

/// Single-frame resolution enhancement.
pub trait SuperResolver<T: Real>: Sync {
    fn upscale(&self, frame: &Image<T>) -> Result<Image<T>>;
}

/// Synthesizes frames between two neighbours at the given times in (0, 1).
pub trait FrameInterpolator<T: Real>: Sync {
    fn interpolate(&self, f0: &Image<T>, f1: &Image<T>, times: &[f64]) -> Result<Vec<Image<T>>>;
}

/// Bicubic ×`factor` upsampling then resizing to `target × target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BicubicUpscaler {
    pub factor: usize,
    pub target: usize,
}

impl<T: Real> SuperResolver<T> for BicubicUpscaler {
    fn upscale(&self, frame: &Image<T>) -> Result<Image<T>> {
        upsample_resize(frame, self.factor, self.target)
    }
}

/// Leaves frames untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoUpscale;

impl<T: Real> SuperResolver<T> for NoUpscale {
    fn upscale(&self, frame: &Image<T>) -> Result<Image<T>> {
        Ok(frame.clone())
    }
}

/// Bidirectional flow once per gap, then [`interpolate_frame`] per time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowInterpolator {
    pub params: FlowParams,
}

impl<T: Real> FrameInterpolator<T> for FlowInterpolator {
    fn interpolate(&self, f0: &Image<T>, f1: &Image<T>, times: &[f64]) -> Result<Vec<Image<T>>> {
        let (fw, bw) = estimate_flow(f0, f1, &self.params)?;
        times.iter().map(|&t| interpolate_frame(f0, f1, t, &fw, &bw)).collect()
    }
}

/// Where an augmented frame came from: 1-based source index and the time
/// towards the next source frame (0 for originals).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOrigin {
    pub source: usize,
    pub t: f64,
}

impl FrameOrigin {
    pub fn is_original(&self) -> bool {
        self.t == 0.0
    }

    /// Position on the source timeline, in source-frame units from frame 1.
    pub fn position(&self) -> f64 {
        (self.source - 1) as f64 + self.t
    }
}

/// Origins of the `augmented_len(n)` output frames.
pub fn augmented_origins(n: usize) -> Vec<FrameOrigin> {
    let mut out = Vec::with_capacity(augmented_len(n));
    for s in 0..n {
        out.push(FrameOrigin { source: s + 1, t: 0.0 });
        if s + 1 < n {
            out.extend(GAP_TIMES.iter().map(|&t| FrameOrigin { source: s + 1, t }));
        }
    }
    out
}

/// Upscales every frame, then fills each gap with interpolated frames.
pub fn augment_video_with<T: Real>(video: &VideoSequence<T>, sr: &dyn SuperResolver<T>, vfi: &dyn FrameInterpolator<T>) -> Result<VideoSequence<T>> {
    let upscaled: Vec<Image<T>> = video.frames.par_iter().map(|f| sr.upscale(f)).collect::<Result<_>>()?;
    let gaps: Vec<Vec<Image<T>>> = upscaled.par_windows(2).map(|w| vfi.interpolate(&w[0], &w[1], &GAP_TIMES)).collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(augmented_len(upscaled.len()));
    let mut gaps = gaps.into_iter();
    for f in upscaled {
        frames.push(f);
        if let Some(g) = gaps.next() {
            if g.len() != GAP_TIMES.len() {
                return Err(invalid(format!("interpolator returned {} frames for {} times", g.len(), GAP_TIMES.len())));
            }
            frames.extend(g);
        }
    }
    VideoSequence::new(frames)
}

/// [`augment_video_with`] using the bicubic and flow defaults.
pub fn augment_video<T: Real>(video: &VideoSequence<T>, factor: usize, target: usize, flow: FlowParams) -> Result<VideoSequence<T>> {
    augment_video_with(video, &BicubicUpscaler { factor, target }, &FlowInterpolator { params: flow })
}

/// Augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Skip super-resolution entirely when false.
    pub super_resolution: bool,
    /// Skip frame interpolation when false (output = upscaled inputs).
    pub interpolation: bool,
    pub upsample_factor: usize,
    pub target_size: usize,
    pub flow: FlowParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { super_resolution: true, interpolation: true, upsample_factor: 4, target_size: 256, flow: FlowParams::default() }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample_factor == 0 || self.target_size == 0 {
            return Err(invalid("upsample_factor and target_size must be positive"));
        }
        self.flow.validate()
    }
}

/// Canonical frame file name, 1-based.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// Manifest lines `frame_0002.png source=1 t=0.25`, one per output frame.
pub fn format_manifest(origins: &[FrameOrigin]) -> String {
    let mut s = String::from("# augmented frame origins: source is 1-based, t is the time towards source+1\n");
    for (i, o) in origins.iter().enumerate() {
        let _ = writeln!(s, "{} source={} t={}", frame_name(i + 1), o.source, o.t);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, FrameOrigin)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::Parse { path: "augment manifest".into(), line: n + 1, message: m.to_string() };
        let mut it = line.split_whitespace();
        let name = it.next().ok_or_else(|| bad("missing file name"))?.to_string();
        let mut source = None;
        let mut t = None;
        for kv in it {
            match kv.split_once('=') {
                Some(("source", v)) => source = Some(v.parse::<usize>().map_err(|_| bad("bad source index"))?),
                Some(("t", v)) => t = Some(v.parse::<f64>().map_err(|_| bad("bad time"))?),
                _ => return Err(bad(&format!("unexpected field `{kv}`"))),
            }
        }
        match (source, t) {
            (Some(source), Some(t)) if source >= 1 && (0.0..1.0).contains(&t) => out.push((name, FrameOrigin { source, t })),
            _ => return Err(bad("needs source>=1 and t in [0, 1)")),
        }
    }
    Ok(out)
}

/// Sorted `frame_*.png` paths in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every frame in `dir`; all failures are reported together.
pub fn read_frames<T: Real>(dir: &Path) -> Result<Vec<Image<T>>> {
    let paths = list_frames(dir)?;
    let loaded: Vec<Result<Image<T>>> = paths.par_iter().map(|p| Image::load_png(p)).collect();
    let errors: Vec<String> = loaded.iter().filter_map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
    if !errors.is_empty() {
        return Err(invalid(format!("{} unreadable frame(s):\n  {}", errors.len(), errors.join("\n  "))));
    }
    Ok(loaded.into_iter().map(|r| r.expect("checked above")).collect())
}

pub fn write_frames<T: Real>(dir: &Path, frames: &[Image<T>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    frames.par_iter().enumerate().map(|(i, f)| f.save_png(&dir.join(frame_name(i + 1)))).collect::<Result<Vec<()>>>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, size: usize) -> Vec<Image<f32>> {
        (0..n)
            .map(|k| {
                Image::from_fn(size, size, |x, y| {
                    let v = 0.5 + 0.3 * ((x as f32 + 2.0 * k as f32) * 0.4).sin() * (y as f32 * 0.3).cos();
                    [v, 1.0 - v, 0.5]
                })
            })
            .collect()
    }

    #[test]
    fn count_law() {
        assert_eq!(augmented_len(21), 81);
        assert_eq!(augmented_len(2), 5);
        for n in 2..30 {
            assert_eq!(augmented_origins(n).len(), augmented_len(n));
        }
    }

    #[test]
    fn originals_survive_at_stride_four() {
        let video = VideoSequence::new(frames(3, 16)).unwrap();
        let out = augment_video(&video, 2, 24, FlowParams::default()).unwrap();
        assert_eq!(out.len(), 9);
        assert_eq!(out.resolution(), (24, 24));
        for (k, f) in video.frames().iter().enumerate() {
            assert_eq!(out.frames()[4 * k], upsample_resize(f, 2, 24).unwrap());
        }
        assert!(out.frames().iter().all(|f| f.data.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(out, augment_video(&video, 2, 24, FlowParams::default()).unwrap());
    }

    #[test]
    fn sequences_need_two_equal_frames() {
        assert!(VideoSequence::new(frames(1, 8)).is_err());
        let mut f = frames(2, 8);
        f.push(Image::new(9, 9));
        assert!(VideoSequence::new(f).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let origins = augmented_origins(21);
        let text = format_manifest(&origins);
        let parsed = parse_manifest(&text).unwrap();
        assert_eq!(parsed.len(), 81);
        assert_eq!(parsed.iter().filter(|(_, o)| !o.is_original()).count(), 60);
        assert_eq!(parsed[1], ("frame_0002.png".to_string(), FrameOrigin { source: 1, t: 0.25 }));
        assert_eq!(parsed[80].1, FrameOrigin { source: 21, t: 0.0 });
        assert!(parse_manifest("frame_0001.png source=0 t=0").is_err());
    }

    #[test]
    fn frames_round_trip_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let fr = frames(2, 8);
        write_frames(dir.path(), &fr).unwrap();
        let back: Vec<Image<f32>> = read_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].data.iter().zip(&fr[0].data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
    }
}
