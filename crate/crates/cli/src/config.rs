//! Experiment configuration: one structured file describing model, training,
//! data source, and sweep; CLI flags override file values. Unknown keys are
//! rejected before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eelab_core::data::{
    gen_synthetic, load_table, split_standardize, DataSplits, SyntheticSpec, TableFormat,
};
use eelab_core::model::BackboneConfig;
use eelab_core::numeric::fnv1a64;
use eelab_core::training::TrainConfig;
use eelab_core::{Error, Result};

pub const OUT_ROOT_ENV: &str = "EELAB_OUT_ROOT";

const ALPHA_GRID: [f64; 9] = [0.0, 0.005, 0.010, 0.015, 0.020, 0.025, 0.030, 0.035, 0.040];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Delimited,
    RecordPerLine,
}

impl From<FileFormat> for TableFormat {
    fn from(f: FileFormat) -> TableFormat {
        match f {
            FileFormat::Delimited => TableFormat::Delimited,
            FileFormat::RecordPerLine => TableFormat::RecordPerLine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic generation spec; mutually exclusive with `file`.
    pub synthetic: Option<SyntheticSpec>,
    /// Dataset file to load instead of generating.
    pub file: Option<PathBuf>,
    pub format: FileFormat,
    /// Train/dev/test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: Some(SyntheticSpec::default()),
            file: None,
            format: FileFormat::Delimited,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    /// Training seeds; empty means seed, seed+1, seed+2.
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alphas: ALPHA_GRID.to_vec(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; falls back to $EELAB_OUT_ROOT, then "eelab_runs".
    pub out_dir: Option<PathBuf>,
    pub model: BackboneConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: None,
            model: BackboneConfig {
                num_layers: 12,
                input_dim: 16,
                hidden_dim: 32,
                num_classes: 4,
                policy_hidden_dim: 16,
            },
            train: TrainConfig::default(),
            data: DataConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.data.synthetic, &self.data.file) {
            (Some(spec), None) => {
                spec.validate()?;
                if spec.feature_dim != self.model.input_dim {
                    return Err(Error::Config(format!(
                        "synthetic feature_dim {} does not match model input_dim {}",
                        spec.feature_dim, self.model.input_dim
                    )));
                }
                if spec.num_classes != self.model.num_classes {
                    return Err(Error::Config(format!(
                        "synthetic num_classes {} does not match model num_classes {}",
                        spec.num_classes, self.model.num_classes
                    )));
                }
            }
            (None, Some(_)) => {}
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data: set either synthetic or file, not both".to_string(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "data: one of synthetic or file is required".to_string(),
                ))
            }
        }
        if self.sweep.alphas.is_empty() {
            return Err(Error::Config("sweep.alphas must not be empty".to_string()));
        }
        Ok(())
    }

    /// Seeds for the sweep command.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.sweep.seeds.is_empty() {
            vec![self.seed, self.seed + 1, self.seed + 2]
        } else {
            self.sweep.seeds.clone()
        }
    }

    /// Canonical serialization; also what the config hash covers.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// 16-hex-digit fingerprint of the effective config. Output placement is
    /// excluded: two runs differing only in out_dir are the same experiment.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        format!("{:016x}", fnv1a64(c.canonical_json().as_bytes()))
    }

    pub fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        match std::env::var(OUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => PathBuf::from(root),
            _ => PathBuf::from("eelab_runs"),
        }
    }

    /// Standard metadata comments for every emitted table.
    pub fn table_comments(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".to_string(), self.hash()),
            ("seed".to_string(), self.seed.to_string()),
        ]
    }

    /// Build the train/dev/test splits from the configured source. The
    /// experiment seed drives both generation and splitting.
    pub fn build_splits(&self) -> Result<DataSplits> {
        let full = match (&self.data.synthetic, &self.data.file) {
            (Some(spec), None) => gen_synthetic(spec, self.seed)?,
            (None, Some(path)) => load_table(path, self.data.format.into())?,
            _ => unreachable!("validate() enforces exactly one source"),
        };
        if full.feature_dim != self.model.input_dim {
            return Err(Error::Data(format!(
                "dataset feature_dim {} does not match model input_dim {}",
                full.feature_dim, self.model.input_dim
            )));
        }
        if full.num_classes > self.model.num_classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, model supports {}",
                full.num_classes, self.model.num_classes
            )));
        }
        let [ft, fd, fe] = self.data.split;
        split_standardize(&full, (ft, fd, fe), self.seed)
    }

    /// Effective training config: the experiment seed and any alpha override
    /// take precedence over the file's values.
    pub fn effective_train(&self, alpha_override: Option<f64>) -> TrainConfig {
        let mut train = self.train.clone();
        train.seed = self.seed;
        if let Some(alpha) = alpha_override {
            train.reward.alpha = alpha;
        }
        train
    }
}

/// Values taken from the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    /// Load the config file (or defaults) and apply flag overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(alpha) = self.alpha {
            cfg.train.reward.alpha = alpha;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
