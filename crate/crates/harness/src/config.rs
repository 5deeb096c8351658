//! Run configuration read from one TOML document.

use std::path::{Path, PathBuf};

use mofid_core::annotator::ProjectionConfig;
use mofid_core::physics_metrics::PhysicsHeuristicConfig;
use mofid_core::scorer::TrainingConfig;
use mofid_core::{FidelityError, Result};
use serde::{Deserialize, Serialize};

use crate::synth::{SynthSpec, DEFAULT_CORRUPTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    #[default]
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/model.json`.
    pub model: Option<PathBuf>,
    /// Defaults to `<output_dir>/annotations.csv`.
    pub annotations: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { dataset_dir: "data".into(), output_dir: "out".into(), model: None, annotations: None }
    }
}

impl PathsConfig {
    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join("model.json"))
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.annotations.clone().unwrap_or_else(|| self.output_dir.join("annotations.csv"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub prompts: usize,
    /// Prompts reported individually (collection `A`); the rest are pooled.
    pub detailed_prompts: usize,
    pub motions_per_prompt: usize,
    pub corruptions: Vec<String>,
    pub max_severity: u8,
    pub fps: f64,
    pub duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            prompts: 20,
            detailed_prompts: 12,
            motions_per_prompt: 8,
            corruptions: DEFAULT_CORRUPTIONS.iter().map(|s| s.to_string()).collect(),
            max_severity: 5,
            fps: 30.0,
            duration_s: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            corruptions: self.corruptions.clone(),
            max_severity: self.max_severity,
            fps: self.fps,
            duration_s: self.duration_s,
            ..SynthSpec::uniform(self.prompts, self.detailed_prompts, self.motions_per_prompt)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `model`, `physical`, a registered metric name, or `all`.
    pub source: String,
    /// Collection whose prompts get their own columns.
    pub detailed_collection: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { source: "all".into(), detailed_collection: Some("A".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub annotator: ProjectionConfig,
    pub physics_heuristics: PhysicsHeuristicConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub format: ReportFormat,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| FidelityError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FidelityError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FidelityError::Config(format!("config encoding failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.annotator.validate()?;
        self.physics_heuristics.validate()?;
        self.training.validate()?;
        self.synth.spec().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, Path::new("x.toml")).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml(
            "format = \"csv\"\n[training]\nepochs = 5\n[paths]\noutput_dir = \"o\"\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 5);
        assert_eq!(cfg.training.batch_size, 64);
        assert_eq!(cfg.format, ReportFormat::Csv);
        assert_eq!(cfg.paths.model_path(), PathBuf::from("o/model.json"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let bad = RunConfig::from_toml("[paths]\nbogus = 1\n", Path::new("x.toml"));
        assert!(matches!(bad, Err(FidelityError::Config(_))));
        let cfg = RunConfig::from_toml("[training]\nlr_decay_per_epoch = 1.5\n", Path::new("x.toml")).unwrap();
        assert!(matches!(cfg.validate(), Err(FidelityError::Config(_))));
    }
}
