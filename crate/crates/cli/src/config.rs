//! The run configuration: one TOML file, every section optional, unknown
//! keys rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use corpusforge::dedup::DedupConfig;
use corpusforge::filter::{HarmPolicy, PiiRules, QualityThresholds};
use corpusforge::normalize::NormalizeConfig;
use corpusforge::schedule::{StageSpec, TokenEstimator};
use corpusforge::sft_clean::SftCleanConfig;
use corpusforge::tokenizer::BpeConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness; copied into every seeded component.
    pub seed: u64,
    pub parallelism: usize,
    pub log_level: LogLevel,
    pub docs_per_shard: usize,
    pub normalize: NormalizeConfig,
    pub filter: FilterSection,
    pub dedup: DedupConfig,
    pub lm: LmSection,
    pub tokenizer: BpeConfig,
    pub schedule: ScheduleSection,
    pub sft: SftCleanConfig,
    pub contam: ContamSection,
    pub pipeline: PipelineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 1,
            log_level: LogLevel::Warn,
            docs_per_shard: 10_000,
            normalize: NormalizeConfig::default(),
            filter: FilterSection::default(),
            dedup: DedupConfig::default(),
            lm: LmSection::default(),
            tokenizer: BpeConfig::default(),
            schedule: ScheduleSection::default(),
            sft: SftCleanConfig::default(),
            contam: ContamSection::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub harm: HarmPolicy,
    pub pii: PiiRules,
    pub quality: QualityThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub discount: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        Self {
            order: corpusforge::ngram_lm::DEFAULT_ORDER,
            discount: corpusforge::ngram_lm::DEFAULT_DISCOUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Used when `stages` is empty: the built-in three-stage curriculum with
    /// its full-size budgets multiplied by this factor.
    pub preset_scale: Option<f64>,
    pub stages: Vec<StageSpec>,
    pub slice_docs: usize,
    /// BPE vocabulary for exact token counts; chars-per-token otherwise.
    pub vocab: Option<PathBuf>,
    pub chars_per_token: BTreeMap<String, f64>,
    pub default_chars_per_token: f64,
    pub lr: LrSection,
    pub batch_size: u64,
    pub seq_len: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let TokenEstimator::CharsPerToken { by_lang, default } = TokenEstimator::default() else {
            unreachable!("default estimator is chars-per-token")
        };
        Self {
            preset_scale: None,
            stages: Vec::new(),
            slice_docs: corpusforge::schedule::DEFAULT_SLICE_DOCS,
            vocab: None,
            chars_per_token: by_lang,
            default_chars_per_token: default,
            lr: LrSection::default(),
            batch_size: 1408,
            seq_len: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSection {
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub total_steps: u64,
}

impl Default for LrSection {
    /// 2.5T tokens at 1408 x 4096 tokens per step.
    fn default() -> Self {
        Self {
            warmup_steps: 2000,
            peak_lr: 3e-4,
            final_lr: 3e-5,
            total_steps: 433_489,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContamSection {
    pub threshold: f64,
}

impl Default for ContamSection {
    fn default() -> Self {
        Self {
            threshold: corpusforge::contam::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Evaluation-set globs; non-empty enables the decontamination stage.
    pub eval: Vec<String>,
    /// Optional n-gram model for the perplexity gate.
    pub lm: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigInvalid {
            path: shown.clone(),
            msg: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::ConfigInvalid {
            path: shown,
            msg: e.message().to_string() + &key_hint(&e),
        })
    }

    /// Propagates the run seed and checks cross-field constraints.
    pub fn finalize(mut self) -> Result<Self, CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Validation(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.docs_per_shard == 0 {
            return Err(CliError::Validation(
                "docs_per_shard must be at least 1".into(),
            ));
        }
        self.filter.harm.seed = self.seed;
        Ok(self)
    }

    pub fn estimator(&self) -> Result<TokenEstimator, CliError> {
        match &self.schedule.vocab {
            Some(p) => Ok(TokenEstimator::Bpe(Box::new(
                corpusforge::tokenizer::BpeVocab::load(p).map_err(CliError::from)?,
            ))),
            None => Ok(TokenEstimator::CharsPerToken {
                by_lang: self.schedule.chars_per_token.clone(),
                default: self.schedule.default_chars_per_token,
            }),
        }
    }
}

fn key_hint(e: &toml::de::Error) -> String {
    match e.span() {
        Some(s) => format!(" (at byte {})", s.start),
        None => String::new(),
    }
}
