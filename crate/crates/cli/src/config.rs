//! Run configuration: a JSON document with one section per subsystem, plus
//! dotted-path overrides applied before parsing.

use std::fs;
use std::path::{Path, PathBuf};

use r2upp_core::data::{Interpolation, PatchSettings};
use r2upp_core::trainer::TrainConfig;
use r2upp_core::{ArchitectureConfig, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: ArchitectureConfig,
    pub trainer: TrainConfig,
    pub data: DataConfig,
    /// Sliding-window settings used at prediction time.
    pub patch: PatchSettings,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architecture: ArchitectureConfig::default(),
            trainer: TrainConfig::default(),
            data: DataConfig::default(),
            patch: PatchSettings::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeConfig {
    pub height: usize,
    pub width: usize,
    pub method: Interpolation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training manifest; split into train/validation unless
    /// `val_manifest` is given.
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// Generated data used instead of a manifest.
    pub synthetic: Option<SynthConfig>,
    /// Train/validation/test fractions for manifest splits.
    pub split: Option<[f64; 3]>,
    pub split_seed: u64,
    /// Validate on the training set itself.
    pub validate_on_train: bool,
    pub crop: Option<CropConfig>,
    pub resize: Option<ResizeConfig>,
    /// Cut training images into patches before training.
    pub train_patches: Option<PatchSettings>,
}

/// Sets `path` (dot separated) inside `root` to `raw`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(Error::Config(format!("empty key in override path {path:?}")));
        }
        let obj = match cur {
            Value::Object(map) => map,
            Value::Null => {
                *cur = Value::Object(Default::default());
                match cur {
                    Value::Object(map) => map,
                    _ => unreachable!(),
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "override {path:?}: {key:?} is inside a non-object value"
                )))
            }
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Reads a config (or starts from defaults), applies `key=value`
/// overrides and validates the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?,
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        apply_override(&mut root, k.trim(), v.trim())?;
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
    cfg.architecture.validate()?;
    cfg.trainer.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_typed_values() {
        let cfg = load(
            None,
            &["trainer.seed=7".into(), "architecture.filters=[4,8,16,32,64]".into()],
        )
        .unwrap();
        assert_eq!(cfg.trainer.seed, 7);
        assert_eq!(cfg.architecture.filters, vec![4, 8, 16, 32, 64]);
        let cfg = load(
            None,
            &[
                "data.synthetic.seed=1".into(),
                "data.synthetic.count=2".into(),
                "data.synthetic.size=32".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.data.synthetic.unwrap().size, 32);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(load(None, &["trainer.momentum=0.5".into()]).is_err());
        assert!(load(None, &["nonsense".into()]).is_err());
    }
}
