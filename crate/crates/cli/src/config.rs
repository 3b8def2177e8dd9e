use std::path::{Path, PathBuf};

use egopose::eval::EvalConfig;
use egopose::model::Task;
use egopose::occlusion::CameraModel;
use egopose::training::{LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error at {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("unknown key {key}")]
    UnknownKey { key: String },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
}

/// Synthetic corpus written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCorpus {
    pub subjects: u32,
    pub per_subject: u32,
    pub duration_s: f64,
    pub fps: f64,
}

impl Default for SynthCorpus {
    fn default() -> Self {
        SynthCorpus { subjects: 4, per_subject: 6, duration_s: 60.0, fps: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// BVH files or directories. Empty means `<out>/bvh`.
    pub paths: Vec<PathBuf>,
    /// Meters per BVH unit.
    pub unit_scale: f64,
    pub train_ratio: f64,
    pub held_out_subjects: Vec<String>,
    pub synthetic: SynthCorpus,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            paths: Vec::new(),
            unit_scale: egopose::skeleton::DEFAULT_UNIT_SCALE,
            train_ratio: 0.8,
            held_out_subjects: Vec::new(),
            synthetic: SynthCorpus::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    /// Skeleton profile JSON; the built-in humanoid profile when absent.
    pub profile: Option<PathBuf>,
    pub camera: CameraModel,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub task: Task,
    pub eval: EvalConfig,
    /// Meters added to every primitive before contact tests.
    pub contact_inflation: f64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            profile: None,
            camera: CameraModel::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            task: Task::InsideOut,
            eval: EvalConfig::default(),
            contact_inflation: 0.01,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn invalid(section: &str, (field, reason): (impl AsRef<str>, String)) -> ConfigError {
    ConfigError::Validation { field: format!("{section}.{}", field.as_ref()), reason }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let reason = e.inner().to_string();
            match reason.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                Some(key) => {
                    let key = if path == "." || path.is_empty() {
                        key.to_string()
                    } else if path.ends_with(key) {
                        path
                    } else {
                        format!("{path}.{key}")
                    };
                    ConfigError::UnknownKey { key }
                }
                None => ConfigError::Parse { path, reason },
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera.validate().map_err(|e| invalid("camera", e))?;
        self.loss.validate().map_err(|e| invalid("loss", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        self.eval.validate().map_err(|e| invalid("eval", e))?;
        let c = &self.corpus;
        if !(c.train_ratio > 0.0 && c.train_ratio <= 1.0) {
            return Err(invalid("corpus", ("train_ratio", format!("{} outside (0, 1]", c.train_ratio))));
        }
        if !(c.unit_scale > 0.0 && c.unit_scale.is_finite()) {
            return Err(invalid("corpus", ("unit_scale", "must be positive".into())));
        }
        let s = &c.synthetic;
        if s.subjects == 0 || s.per_subject == 0 || !(s.duration_s > 0.0) || !(s.fps > 0.0) {
            return Err(invalid("corpus.synthetic", ("subjects", "counts, duration and fps must be positive".into())));
        }
        for (i, p) in c.paths.iter().enumerate() {
            if !p.exists() {
                return Err(invalid("corpus", (format!("paths[{i}]"), format!("{} does not exist", p.display()))));
            }
        }
        if let Some(p) = &self.profile {
            if !p.is_file() {
                return Err(ConfigError::Validation { field: "profile".into(), reason: format!("{} does not exist", p.display()) });
            }
        }
        if !(self.contact_inflation >= 0.0 && self.contact_inflation.is_finite()) {
            return Err(ConfigError::Validation { field: "contact_inflation".into(), reason: "must be non-negative".into() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex sha256 of the canonical JSON form. The output directory is
    /// excluded so identical runs into different directories agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        hex_digest(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    RunConfig::from_json(&text)
}
