//! The TOML run configuration shared by every CLI subcommand.
//!
//! Each section falls back to the defaults of its module. The `[model]`
//! section additionally accepts `preset = "desk" | "tiny" | "tagger" |
//! "paper"`; remaining keys in the section override fields of the preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audiogen::AudiogenConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::experiments::{ExperimentPlan, ExperimentsConfig};
use crate::frontend::FrontendConfig;
use crate::model::ModelConfig;
use crate::postprocess::PostprocessConfig;
use crate::training::TrainConfig;
use crate::util::read_to_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root directory of every artifact the pipeline reads or writes.
    pub out: PathBuf,
    pub audiogen: AudiogenConfig,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
    pub experiments: ExperimentsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            audiogen: AudiogenConfig::default(),
            frontend: FrontendConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
            eval: EvalConfig::default(),
            experiments: ExperimentsConfig::default(),
        }
    }
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if let Some(toml::Value::Table(model)) = doc.get_mut("model") {
            if let Some(preset) = model.remove("preset") {
                let name = preset
                    .as_str()
                    .ok_or_else(|| Error::parse(origin, "model.preset must be a string"))?;
                let mel_bins = doc
                    .get("frontend")
                    .and_then(|f| f.get("mel_bins"))
                    .and_then(|m| m.as_integer())
                    .map_or(FrontendConfig::default().mel_bins, |m| m.max(0) as usize);
                let mut base = toml::Value::try_from(ModelConfig::preset(name, mel_bins)?)
                    .map_err(|e| Error::Format(e.to_string()))?;
                let own = std::mem::take(doc.get_mut("model").and_then(|m| m.as_table_mut()).expect("checked above"));
                merge(&mut base, toml::Value::Table(own));
                doc.insert("model".into(), base);
            }
        }
        let config: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(origin, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validates every section plus the invariants that span sections.
    pub fn validate(&self) -> Result<()> {
        self.audiogen.validate()?;
        self.frontend.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.postprocess.validate()?;
        self.eval.validate()?;
        self.experiments.validate()?;
        if self.frontend.mel_bins != self.model.mel_bins {
            return Err(Error::invalid(format!(
                "frontend.mel_bins ({}) must equal model.mel_bins ({})",
                self.frontend.mel_bins, self.model.mel_bins
            )));
        }
        if self.model.sed_classes != crate::taxonomy::EventClass::COUNT {
            return Err(Error::invalid(format!(
                "model.sed_classes must be {}",
                crate::taxonomy::EventClass::COUNT
            )));
        }
        if self.model.has_acc() && self.model.acc_classes != crate::taxonomy::AccClass::COUNT {
            return Err(Error::invalid(format!(
                "model.acc_classes must be 0 or {}",
                crate::taxonomy::AccClass::COUNT
            )));
        }
        Ok(())
    }

    /// Resolves `path` against [`RunConfig::out`] unless it is absolute.
    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        self.out.join(path)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve("data")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.resolve("features")
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            experiments: self.experiments.clone(),
            train: self.training.clone(),
            model: self.model.clone(),
            augment: self.frontend.augment.clone(),
            postprocess: self.postprocess.clone(),
            eval: self.eval.clone(),
        }
    }
}
