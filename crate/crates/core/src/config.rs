//! TOML run configuration: a preset plus overrides.
//!
//! ```toml
//! preset = "desk"
//! seed = 7
//!
//! [regression]
//! mode = "joint_bidirectional"
//!
//! [cfse]
//! enabled = true
//! source_features = "f2f3"
//! gridnet = "on"
//!
//! [train]
//! epochs = 5
//!
//! [data]
//! dir = "data/desk"
//! ```
//!
//! `[network]`, `[regression]` and `[cfse]` override the model of the
//! preset; `[train]` holds the scalar training settings; `[optimizer]`,
//! `[loss]`, `[perceptual]` and `[augmentation]` map to their structs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{Dataset, GenerateConfig, Split};
use crate::error::{io_error, Error, Result};
use crate::model::Preset;
use crate::train::TrainConfig;

/// Where samples come from: a dataset directory, or generated in memory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub generate: GenerateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl DataConfig {
    /// Reads `split` from the dataset directory, or renders it from the
    /// generator settings when no directory is set.
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match &self.dir {
            Some(dir) => Dataset::load_dir(dir, split),
            None => Dataset::generate(&self.generate, split),
        }
    }
}

const MODEL_SECTIONS: [&str; 3] = ["network", "regression", "cfse"];
const STRUCT_SECTIONS: [&str; 4] = ["optimizer", "loss", "perceptual", "augmentation"];

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut user: Table = text.parse().map_err(config_error)?;
        let preset = match user.remove("preset") {
            None => Preset::Desk,
            Some(Value::String(s)) => s.parse().map_err(|_| Error::Config(format!("unknown preset {s:?}")))?,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let base = TrainConfig::for_preset(preset);
        let mut merged = Table::try_from(&base).map_err(config_error)?;
        let mut model_over = Table::new();
        let mut train_over = Table::new();
        let mut data = DataConfig::default();
        for (key, value) in user {
            match key.as_str() {
                k if MODEL_SECTIONS.contains(&k) => {
                    model_over.insert(key, value);
                }
                k if STRUCT_SECTIONS.contains(&k) => {
                    train_over.insert(key, value);
                }
                "seed" => {
                    train_over.insert(key, value);
                }
                "train" => match value {
                    Value::Table(t) => merge(&mut train_over, &t),
                    _ => return Err(Error::Config("[train] must be a table".into())),
                },
                "data" => data = value.try_into().map_err(config_error)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        for (k, _) in train_over.iter() {
            if k == "model" || k == "preset" {
                return Err(Error::Config(format!("{k:?} cannot be set inside [train]")));
            }
        }
        merge(&mut merged, &train_over);
        if let Some(Value::Table(model)) = merged.get_mut("model") {
            merge(model, &model_over);
        }
        let train: TrainConfig = Value::Table(merged).try_into().map_err(config_error)?;
        train.validate()?;
        Ok(RunConfig { train, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_error(format!("reading config {}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfse::{GridMode, SourceFeatures};
    use crate::regressor::RegressionMode;

    #[test]
    fn overrides_apply_on_top_of_the_preset() {
        let cfg = RunConfig::parse(
            r#"
            preset = "tiny"
            seed = 7
            [regression]
            mode = "quadratic"
            [cfse]
            enabled = false
            source_features = "f1f2"
            gridnet = "off"
            [train]
            epochs = 3
            batch_size = 2
            [loss]
            lambda_d = 0.5
            [data.generate]
            train = 10
            "#,
        )
        .unwrap();
        let t = &cfg.train;
        assert_eq!(t.preset, Preset::Tiny);
        assert_eq!(t.seed, 7);
        assert_eq!(t.epochs, 3);
        assert_eq!(t.batch_size, 2);
        assert_eq!(t.model.regression.mode, RegressionMode::Quadratic);
        assert!(!t.model.cfse.enabled);
        assert_eq!(t.model.cfse.source_features, SourceFeatures::F1f2);
        assert_eq!(t.model.cfse.gridnet, GridMode::Off);
        assert_eq!(t.model.network.base_channels, 8);
        assert_eq!(t.loss.lambda_d, 0.5);
        assert_eq!(t.loss.lambda_vgg, 0.005);
        assert_eq!(cfg.data.generate.train, 10);
        assert_eq!(cfg.data.generate.height, 64);
    }

    #[test]
    fn empty_config_is_the_desk_default() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.train, TrainConfig::for_preset(Preset::Desk));
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.epochs, 5);
    }

    #[test]
    fn resolved_config_parses_back() {
        let cfg = RunConfig::parse("preset = \"full\"\n[regression]\nmode = \"linear\"").unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.epochs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("colour = 1").is_err());
        assert!(RunConfig::parse("[regression]\nmood = \"x\"").is_err());
        assert!(RunConfig::parse("[regression]\nmode = \"cubic\"").is_err());
        assert!(RunConfig::parse("preset = \"huge\"").is_err());
        assert!(RunConfig::parse("[train]\nbatch_size = 0").is_err());
    }
}
