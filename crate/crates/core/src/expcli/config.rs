//! Experiment configuration files and their digests.
//!
//! A config is one TOML document. Its digest is the SHA-256 of the canonical
//! JSON rendering of the parsed document: keys sorted, comments and layout
//! gone. `output_dir` only says where artifacts land and is left out.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricOptions;
use crate::taskdata::{
    load_csv, load_idx, make_incremental_stream, synth_gaussian_tasks, CsvSchema,
    GaussianTaskConfig, Split, SplitDataset, TaskStream,
};
use crate::trainers::MethodSpec;

/// Where the examples come from. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Gaussian(GaussianTaskConfig),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_label_column() -> String {
    CsvSchema::default().label_column
}

impl DatasetSpec {
    pub fn load(&self, base: &Path) -> Result<SplitDataset> {
        let at = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        match self {
            DatasetSpec::Gaussian(cfg) => synth_gaussian_tasks(cfg),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok(SplitDataset {
                train: load_idx(&at(train_images), &at(train_labels), Split::Train)?,
                test: load_idx(&at(test_images), &at(test_labels), Split::Test)?,
            }),
            DatasetSpec::Csv {
                train,
                test,
                label_column,
            } => {
                let schema = CsvSchema {
                    label_column: label_column.clone(),
                };
                Ok(SplitDataset {
                    train: load_csv(&at(train), &schema, Split::Train)?,
                    test: load_csv(&at(test), &schema, Split::Test)?,
                })
            }
        }
    }
}

fn default_class_order_seed() -> u64 {
    1993
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub base_classes: usize,
    pub num_tasks: usize,
    #[serde(default = "default_class_order_seed")]
    pub class_order_seed: u64,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitOptions {
    /// Binary checkpoint after every task.
    #[serde(default = "default_true")]
    pub checkpoints: bool,
    /// JSON text export next to every binary checkpoint.
    #[serde(default)]
    pub json_checkpoints: bool,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self {
            checkpoints: true,
            json_checkpoints: false,
            metrics: MetricOptions::default(),
        }
    }
}

/// One experiment: a dataset, how it is split into tasks, the method and
/// the seeds to run it with. Each seed replaces `method.train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in comparison tables.
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSpec,
    pub stream: StreamSpec,
    pub method: MethodSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit: EmitOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.method.validate()
    }

    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => {
                let arch = serde_json::to_value(self.method.archetype)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                if self.method.use_ivt {
                    format!("{arch}+ivt")
                } else {
                    arch
                }
            }
        }
    }

    /// The task stream every seed trains on.
    pub fn build_stream(&self, base: &Path) -> Result<TaskStream> {
        let data = self.dataset.load(base)?;
        make_incremental_stream(
            &data,
            self.stream.base_classes,
            self.stream.num_tasks,
            self.stream.class_order_seed,
        )
    }
}

/// SHA-256 hex digest of a value's canonical JSON text.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json maps keep keys sorted, so the text is canonical.
    let canonical = serde_json::to_value(value)?.to_string();
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// A parsed config together with its provenance.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Canonical TOML text after overrides.
    pub text: String,
    pub digest: String,
    /// Digest of the dataset and stream sections alone.
    pub dataset_digest: String,
    /// Directory relative dataset paths resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &base, seed_override)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_text(text: &str, base_dir: &Path, seed_override: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(seed) = seed_override {
            let seed = i64::try_from(seed)
                .map_err(|_| Error::Config(format!("seed {seed} does not fit TOML integers")))?;
            table.insert(
                "seeds".into(),
                toml::Value::Array(vec![toml::Value::Integer(seed)]),
            );
        }
        let config: ExperimentConfig = table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;

        let mut digested = table.clone();
        digested.remove("output_dir");
        let digest = digest_of(&digested)?;
        let dataset_digest = digest_of(&(table.get("dataset"), table.get("stream")))?;
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            config,
            text,
            digest,
            dataset_digest,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn build_stream(&self) -> Result<TaskStream> {
        self.config.build_stream(&self.base_dir)
    }
}
