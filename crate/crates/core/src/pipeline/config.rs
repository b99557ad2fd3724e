//! Pipeline configuration file.
//!
//! One TOML document; every table and key is optional and falls back to the
//! defaults below. Relative paths are resolved against the directory holding
//! the config file. `--set a.b=value` overrides are applied to the parsed
//! document before it is interpreted, so they win over file values.
//!
//! ```toml
//! [paths]
//! frames = "frames"          # source frame_*.png, one per orbit view
//! output = "out"             # everything the pipeline writes goes here
//!
//! [body]
//! asset = "person.body"      # omit for the bundled capsule figure
//! poses = "poses.txt"        # one row per source frame; omit for the rest pose
//! beta = []                  # shape coefficients, empty = zeros
//!
//! [orbit]                    # camera circle of the source frames
//! elevation = 0.0
//! radius = 2.7
//! fov = 33.8
//!
//! [augment]                  # super_resolution, interpolation, upsample_factor, target_size, [augment.flow]
//! [model]                    # samples, uv_resolution, feature_channels, hidden_widths, sample_seed
//! [train]                    # epochs, batch_size, learning_rate, motion_learning_rate, motion_delay,
//!                            # seed, checkpoint_interval, background, [train.weights]
//!
//! [perceptual]
//! weights = "pyramid.osfx"   # omit for a seeded random pyramid
//! seed = 0
//!
//! [eval]
//! ground_truth = "gt"        # holds <view name>.png per view
//! lpips = true
//! views = [{ name = "front", azimuth = 0.0 }, ...]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{invalid, Error, Result};
use crate::train::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub frames: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { frames: "frames".into(), output: "out".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyConfig {
    pub asset: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitConfig {
    pub elevation: f64,
    pub radius: f64,
    pub fov: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig { elevation: 0.0, radius: 2.7, fov: 33.8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub weights: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalView {
    pub name: String,
    pub azimuth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ground_truth: Option<PathBuf>,
    pub lpips: bool,
    pub views: Vec<EvalView>,
}

/// Front is the azimuth of the first input view.
pub fn default_eval_views() -> Vec<EvalView> {
    [("front", 0.0), ("back", 180.0), ("right", 90.0), ("left", 270.0)].into_iter().map(|(n, a)| EvalView { name: n.into(), azimuth: a }).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ground_truth: None, lpips: true, views: default_eval_views() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub body: BodyConfig,
    pub orbit: OrbitConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub perceptual: PerceptualConfig,
    pub eval: EvalConfig,
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line: 0, message: message.into() }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `dotted.key=value` to a document, creating tables as needed.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("override key `{key}` has an empty component")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses `text`, applies overrides and resolves relative paths against
    /// `base`. Does not touch the file system.
    pub fn from_toml(text: &str, name: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| config_error(name, e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig = PipelineConfig::deserialize(toml::Value::Table(doc)).map_err(|e| config_error(name, e.to_string()))?;
        rebase(base, &mut cfg.paths.frames);
        rebase(base, &mut cfg.paths.output);
        for p in [&mut cfg.body.asset, &mut cfg.body.poses, &mut cfg.perceptual.weights, &mut cfg.eval.ground_truth].into_iter().flatten() {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(&path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &path.display().to_string(), base, overrides)
    }

    /// Value checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let o = &self.orbit;
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            return Err(invalid(format!("orbit radius must be positive, got {}", o.radius)));
        }
        if !(o.fov > 0.0 && o.fov < 180.0) {
            return Err(invalid(format!("orbit fov must be in (0, 180), got {}", o.fov)));
        }
        if !o.elevation.is_finite() || o.elevation.abs() >= 90.0 {
            return Err(invalid(format!("orbit elevation must be in (-90, 90), got {}", o.elevation)));
        }
        if self.eval.views.is_empty() {
            return Err(invalid("eval.views is empty"));
        }
        let mut names: Vec<&str> = self.eval.views.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("eval view names must be unique"));
        }
        if !self.paths.frames.is_dir() {
            return Err(invalid(format!("frames directory {} does not exist", self.paths.frames.display())));
        }
        for (what, p) in [("body asset", &self.body.asset), ("body poses", &self.body.poses), ("perceptual weights", &self.perceptual.weights)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(invalid(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        if let Some(gt) = &self.eval.ground_truth {
            if !gt.is_dir() {
                return Err(invalid(format!("ground-truth directory {} does not exist", gt.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = PipelineConfig::from_toml("", "c.toml", Path::new("/base"), &[]).unwrap();
        assert_eq!(c.paths.frames, PathBuf::from("/base/frames"));
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.eval.views.len(), 4);
    }

    #[test]
    fn overrides_win_over_file_values() {
        let text = "[train]\nepochs = 5\nseed = 1\n";
        let o = vec!["train.epochs=7".to_string(), "paths.output=/tmp/x".into(), "train.background=[0.0, 0.0, 0.0]".into()];
        let c = PipelineConfig::from_toml(text, "c.toml", Path::new("."), &o).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.seed, 1);
        assert_eq!(c.train.background, [0.0; 3]);
        assert_eq!(c.paths.output, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[train]\nepoch = 5\n", "c.toml", Path::new("."), &[]).is_err());
        assert!(PipelineConfig::from_toml("", "c.toml", Path::new("."), &["nope.x=1".into()]).is_err());
        assert!(PipelineConfig::from_toml("", "c.toml", Path::new("."), &["train.epochs".into()]).is_err());
    }

    #[test]
    fn validation_checks_paths_and_values() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("frames")).unwrap();
        let ok = PipelineConfig::from_toml("", "c.toml", dir.path(), &[]).unwrap();
        ok.validate().unwrap();
        let missing = PipelineConfig::from_toml("[body]\nposes = \"nope.txt\"\n", "c.toml", dir.path(), &[]).unwrap();
        assert!(missing.validate().is_err());
        let bad = PipelineConfig::from_toml("[orbit]\nfov = 0.0\n", "c.toml", dir.path(), &[]).unwrap();
        assert!(bad.validate().is_err());
    }
}
