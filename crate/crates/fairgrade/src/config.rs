//! The TOML run configuration.
//!
//! ```toml
//! [data]
//! dir = "cohort"             # or enrollments = ..., demographics = ...
//! min_course_enrollments = 20
//! split = [13, 1, 1]
//!
//! [data.synth]               # used when no files are given
//! seed = 42
//!
//! [model]
//! hidden = 64
//! seed = 0
//!
//! [strategy]
//! id = "adversarial"
//! alpha = 0.1
//!
//! [train]
//! batch_size = 32
//! max_epochs = 50
//!
//! [report]
//! cutoff = "A"
//! ```
//!
//! Unknown keys are rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use fairgrade_core::cohort::{
    default_group_list, CohortDataset, DatasetSchema, SplitSpec, DEFAULT_MIN_COURSE_ENROLLMENTS, DEFAULT_SPLIT_RATIOS,
};
use fairgrade_core::encoding::FeatureMode;
use fairgrade_core::grade::{Cutoff, LetterScale};
use fairgrade_core::losses::WeightNormalization;
use fairgrade_core::optim::AdamConfig;
use fairgrade_core::seqnet::{AdversaryMode, DEFAULT_HIDDEN};
use fairgrade_core::synth::{self, SynthConfig};
use fairgrade_core::trainer::{StrategyConfig, StrategyId, StrategyParams, TrainConfig, DEFAULT_ALPHA};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_dataset, DataPaths};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub strategy: StrategySection,
    pub train: TrainSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory holding `enrollments.csv` and `demographics.csv`.
    pub dir: Option<PathBuf>,
    pub enrollments: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
    /// Generator settings, used when no files are configured.
    pub synth: Option<SynthConfig>,
    pub min_course_enrollments: usize,
    /// Train / validation / test term ratios.
    pub split: [u32; 3],
    pub group_list: Option<Vec<String>>,
    pub letter_scale: Option<LetterScale>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            enrollments: None,
            demographics: None,
            synth: None,
            min_course_enrollments: DEFAULT_MIN_COURSE_ENROLLMENTS,
            split: [DEFAULT_SPLIT_RATIOS.0, DEFAULT_SPLIT_RATIOS.1, DEFAULT_SPLIT_RATIOS.2],
            group_list: None,
            letter_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub id: String,
    pub alpha: f64,
    pub adversary: AdversaryMode,
    pub label_normalization: WeightNormalization,
    /// Per-group graduation rates; taken from the generator settings or the
    /// built-in defaults when absent.
    pub graduation_rates: Option<Vec<f64>>,
    pub group_proportions: Option<Vec<f64>>,
    pub infer_rmv_features: FeatureMode,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            id: "default".into(),
            alpha: DEFAULT_ALPHA,
            adversary: AdversaryMode::Reversal,
            label_normalization: WeightNormalization::MeanOne,
            graduation_rates: None,
            group_proportions: None,
            infer_rmv_features: FeatureMode::Race,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub apply_label_weighting_everywhere: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            max_epochs: t.max_epochs,
            patience: t.patience,
            apply_label_weighting_everywhere: t.apply_label_weighting_everywhere,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub cutoff: Cutoff,
    /// Groups entering range / STD; all but Decline-to-State when absent.
    pub included_groups: Option<Vec<String>>,
    pub pass_as_positive: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Loads the file when given, otherwise all defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn schema(&self) -> DatasetSchema {
        let synth_groups = self.data.synth.as_ref().map(|s| s.group_names());
        DatasetSchema {
            group_list: self
                .data
                .group_list
                .clone()
                .or(synth_groups)
                .unwrap_or_else(default_group_list),
            letter_scale: self
                .data
                .letter_scale
                .clone()
                .or_else(|| self.data.synth.as_ref().map(|s| s.letter_scale.clone()))
                .unwrap_or_default(),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        self.data.synth.clone().unwrap_or_default()
    }

    /// File locations, if the data section names files.
    pub fn data_paths(&self) -> Result<Option<DataPaths>> {
        let d = &self.data;
        match (&d.dir, &d.enrollments, &d.demographics) {
            (Some(dir), None, None) => Ok(Some(DataPaths::in_dir(dir))),
            (None, Some(e), Some(p)) => Ok(Some(DataPaths {
                enrollments: e.clone(),
                demographics: p.clone(),
            })),
            (None, None, None) => Ok(None),
            _ => Err(Error::Usage(
                "data: give either `dir` or both `enrollments` and `demographics`".into(),
            )),
        }
    }

    /// Reads the configured files, or generates the synthetic cohort.
    pub fn load_dataset(&self) -> Result<CohortDataset> {
        match self.data_paths()? {
            Some(paths) => load_dataset(&paths, self.data.min_course_enrollments, &self.schema()),
            None => Ok(synth::generate(&self.synth_config())?),
        }
    }

    pub fn split(&self, dataset: &CohortDataset) -> Result<SplitSpec> {
        let [a, b, c] = self.data.split;
        Ok(fairgrade_core::cohort::chronological_split(dataset, (a, b, c))?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            seed: self.model.seed,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            max_epochs: t.max_epochs,
            patience: t.patience,
            apply_label_weighting_everywhere: t.apply_label_weighting_everywhere,
            hidden: self.model.hidden,
        }
    }

    pub fn strategy_params(&self) -> StrategyParams {
        let s = &self.strategy;
        let graduation_rates = s.graduation_rates.clone().unwrap_or_else(|| {
            let groups = self.data.synth.as_ref().map_or_else(synth::default_groups, |c| c.groups.clone());
            groups.iter().map(|g| g.graduation_rate).collect()
        });
        StrategyParams {
            alpha: s.alpha,
            adversary: s.adversary,
            label_normalization: s.label_normalization,
            graduation_rates,
            group_proportions: s.group_proportions.clone(),
            infer_rmv_features: s.infer_rmv_features,
        }
    }

    pub fn resolve_strategy(&self, id: &str) -> Result<StrategyConfig> {
        let id = StrategyId::parse(id).map_err(|e| Error::Usage(e.to_string()))?;
        Ok(StrategyConfig::resolve(
            id,
            &self.strategy_params(),
            self.train.apply_label_weighting_everywhere,
        )?)
    }
}
