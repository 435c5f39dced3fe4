//! JSON run configuration for `train`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::model::VitConfig;
use crate::training::TrainConfig;

/// Relative paths are resolved against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Master seed; also copied into `train.seed`.
    #[serde(default)]
    pub seed: u64,
    pub model: VitConfig,
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl RunConfig {
    /// Read `path`, apply `key=value` overrides in order, and deserialise.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Round-trip first so defaulted fields are addressable by overrides.
        let parsed: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        value = serde_json::to_value(&parsed).expect("config serialises");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        let m = &self.model;
        let p = &self.preprocess;
        if (p.target_height, p.target_width) != (m.image_height, m.image_width) {
            return Err(Error::Config(format!(
                "preprocess target {}x{} differs from model input {}x{}",
                p.target_height, p.target_width, m.image_height, m.image_width
            )));
        }
        if p.channels() != m.channels {
            return Err(Error::Config(format!(
                "preprocess has {} channels, model expects {}",
                p.channels(),
                m.channels
            )));
        }
        Ok(())
    }
}

/// Set a dotted path such as `train.learning_rate=0.01`. Every segment must
/// already exist. The value is parsed as JSON and falls back to a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let mut node = root;
    for seg in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(seg))
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
    Ok(())
}
