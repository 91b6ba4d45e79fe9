//! Run configuration: one TOML file describing data, features, model, and
//! training; command-line flags override individual fields. The resolved
//! configuration is echoed into the run directory so a run can be repeated
//! bit-identically.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctxrec_core::context::{ContextSchema, ContextSchemaConfig};
use ctxrec_core::data::SplitStrategy;
use ctxrec_core::model::{CellKind, IntegrationKind, ModelConfig};
use ctxrec_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RUN_DIR_ENV: &str = "CTXREC_RUN_DIR";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub features: FeaturesSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataSection {
    pub format: DataFormat,
    /// Canonical corpus path (`format = "canonical"`).
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Click/buy files (`format = "yoochoose"`).
    #[serde(default)]
    pub clicks: Option<PathBuf>,
    #[serde(default)]
    pub buys: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub split: SplitSection,
    /// Relabel items as (item, event type) pairs before training. Known to
    /// optimize poorly; kept for completeness.
    #[serde(default)]
    pub cartesian_item_event: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Canonical,
    Yoochoose,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    tag = "strategy"
)]
pub enum SplitSection {
    /// Use the entire corpus for training.
    #[default]
    None,
    TimeHoldout {
        valid_secs: i64,
        test_secs: i64,
    },
    IdHoldout {
        valid_frac: f64,
        test_frac: f64,
        #[serde(default)]
        seed: u64,
    },
}


#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FeaturesSection {
    #[serde(default = "default_true")]
    pub month: bool,
    #[serde(default = "default_true")]
    pub hour: bool,
    #[serde(default = "default_true")]
    pub day_of_week: bool,
    #[serde(default = "default_true")]
    pub time_delta: bool,
    #[serde(default = "default_true")]
    pub event_type: bool,
    #[serde(default)]
    pub first_event_bucket: bool,
    #[serde(default)]
    pub utc_offset_secs: i32,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            month: true,
            hour: true,
            day_of_week: true,
            time_delta: true,
            event_type: true,
            first_event_bucket: false,
            utc_offset_secs: 0,
        }
    }
}

impl FeaturesSection {
    pub fn schema(&self, event_types: Vec<String>) -> ContextSchema {
        ContextSchema::new(
            ContextSchemaConfig {
                month: self.month,
                hour: self.hour,
                day_of_week: self.day_of_week,
                time_delta: self.time_delta,
                event_type: self.event_type,
                first_event_bucket: self.first_event_bucket,
                utc_offset_secs: self.utc_offset_secs,
            },
            event_types,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSection {
    pub cell: CellKind,
    #[serde(default = "default_integration")]
    pub input_integration: IntegrationKind,
    #[serde(default = "default_integration")]
    pub output_integration: IntegrationKind,
    #[serde(default = "default_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_dim")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub share_context_projection: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub valid_every: usize,
    #[serde(default = "default_k")]
    pub valid_k: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all train fields have defaults")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

fn default_true() -> bool {
    true
}
fn default_min_count() -> usize {
    5
}
fn default_max_len() -> usize {
    20
}
fn default_integration() -> IntegrationKind {
    IntegrationKind::None
}
fn default_dim() -> usize {
    100
}
fn default_batch_size() -> usize {
    256
}
fn default_iterations() -> usize {
    10_000
}
fn default_lr_start() -> f64 {
    0.01
}
fn default_lr_end() -> f64 {
    0.001
}
fn default_precision() -> Precision {
    Precision::F64
}
fn default_log_every() -> usize {
    100
}
fn default_k() -> usize {
    10
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.format {
            DataFormat::Canonical if self.data.corpus.is_none() => {
                bail!("data.corpus is required when data.format = \"canonical\"")
            }
            DataFormat::Yoochoose if self.data.clicks.is_none() => {
                bail!("data.clicks is required when data.format = \"yoochoose\"")
            }
            _ => Ok(()),
        }
    }

    pub fn model_config(&self, vocab_size: u32, schema: &ContextSchema) -> ModelConfig {
        let mut model = ModelConfig::new(self.model.cell, self.model.input_integration)
            .with_dims(vocab_size, self.model.embed_dim, self.model.hidden_dim)
            .with_schema(schema);
        model.output_integration = self.model.output_integration;
        model.share_context_projection = self.model.share_context_projection;
        model
    }

    pub fn train_config(&self, model: ModelConfig) -> TrainConfig {
        let mut cfg = TrainConfig::new(model);
        cfg.batch_size = self.train.batch_size;
        cfg.iterations = self.train.iterations;
        cfg.lr_start = self.train.lr_start;
        cfg.lr_end = self.train.lr_end;
        cfg.seed = self.train.seed;
        cfg.grad_clip = self.train.grad_clip;
        cfg.log_every = self.train.log_every;
        cfg.valid_every = self.train.valid_every;
        cfg.valid_k = self.train.valid_k;
        cfg
    }

    pub fn split_strategy(&self) -> Option<(SplitStrategy, u64)> {
        match self.data.split {
            SplitSection::None => None,
            SplitSection::TimeHoldout {
                valid_secs,
                test_secs,
            } => Some((
                SplitStrategy::TimeHoldout {
                    valid_secs,
                    test_secs,
                },
                0,
            )),
            SplitSection::IdHoldout {
                valid_frac,
                test_frac,
                seed,
            } => Some((
                SplitStrategy::IdHoldout {
                    valid_frac,
                    test_frac,
                },
                seed,
            )),
        }
    }

    /// Resolved run directory: flag > environment > config > "./run".
    pub fn resolve_run_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(dir) = flag {
            return dir.to_path_buf();
        }
        if let Ok(dir) = std::env::var(RUN_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        self.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
    }

    /// Echo the resolved configuration for bit-identical reruns.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("config serialization")?;
        std::fs::write(dir.join("config.toml"), text)
            .with_context(|| format!("cannot write {}", dir.join("config.toml").display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [data]
            format = "canonical"
            corpus = "corpus.csv"
            [model]
            cell = "gru"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.train.iterations, 10_000);
        assert_eq!(cfg.train.lr_start, 0.01);
        assert_eq!(cfg.train.lr_end, 0.001);
        assert_eq!(cfg.data.min_count, 5);
        assert_eq!(cfg.data.max_len, 20);
    }

    #[test]
    fn missing_field_error_names_it() {
        let err = toml::from_str::<RunConfig>("[data]\nformat = \"canonical\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("model"), "{err}");
    }

    #[test]
    fn unknown_field_rejected_with_position() {
        let err = toml::from_str::<RunConfig>(
            "[data]\nformat = \"canonical\"\ncorpus = \"x\"\nbogus = 1\n[model]\ncell = \"gru\"\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [data]
            format = "yoochoose"
            clicks = "clicks.dat"
            buys = "buys.dat"
            [data.split]
            strategy = "time-holdout"
            valid-secs = 604800
            test-secs = 604800
            [model]
            cell = "context-wrapper-gru"
            input-integration = "concat-mult"
            output-integration = "concat-mult"
            [train]
            iterations = 50
            seed = 9
            "#,
        )
        .unwrap();
        let echoed = toml::to_string_pretty(&cfg).unwrap();
        let reparsed: RunConfig = toml::from_str(&echoed).unwrap();
        let again = toml::to_string_pretty(&reparsed).unwrap();
        assert_eq!(echoed, again);
    }
}
