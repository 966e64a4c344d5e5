use corpusforge::contam::ContamError;
use corpusforge::corpus::CorpusError;
use corpusforge::dedup::DedupError;
use corpusforge::filter::FilterError;
use corpusforge::ngram_lm::LmError;
use corpusforge::normalize::NormalizeError;
use corpusforge::schedule::ScheduleError;
use corpusforge::sft_clean::SftError;
use corpusforge::tokenizer::TokenizerError;
use thiserror::Error;

/// Exit 1 for anything the user can fix in flags or config, 2 for bad data.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config invalid: {path}: {msg}")]
    ConfigInvalid { path: String, msg: String },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } | CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn invalid(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Pattern(..) => CliError::invalid(e),
            _ => CliError::data(e),
        }
    }
}

impl From<NormalizeError> for CliError {
    fn from(e: NormalizeError) -> Self {
        CliError::invalid(e)
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::NoScores => CliError::data(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::BadOrder(_) | LmError::BadDiscount(_) => CliError::invalid(e),
            _ => CliError::data(e),
        }
    }
}

impl From<DedupError> for CliError {
    fn from(e: DedupError) -> Self {
        match e {
            DedupError::BadDimension(_) => CliError::invalid(e),
            _ => CliError::data(e),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::VocabTooSmall { .. } | TokenizerError::BadCoverage(_) => {
                CliError::invalid(e)
            }
            _ => CliError::data(e),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::InsufficientTokens { .. }
            | ScheduleError::MixInfeasible { .. }
            | ScheduleError::Corpus(_) => CliError::data(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<SftError> for CliError {
    fn from(e: SftError) -> Self {
        match e {
            SftError::RegexCompile { .. } | SftError::InvalidConfig(_) => CliError::invalid(e),
            _ => CliError::data(e),
        }
    }
}

impl From<ContamError> for CliError {
    fn from(e: ContamError) -> Self {
        match e {
            ContamError::BadThreshold(_) => CliError::invalid(e),
            _ => CliError::data(e),
        }
    }
}
