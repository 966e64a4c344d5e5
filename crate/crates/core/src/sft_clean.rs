//! Cleaning for supervised fine-tuning pairs: regex rules, a pluggable
//! quality gate (keep iff score >= `min_quality`) and semantic dedup (drop iff
//! cosine to an earlier kept pair is strictly above `dup_cos_threshold`).
//!
//! Pairs the scorer cannot score go to a retry queue instead of being dropped.
//! Trusted pairs skip every stage.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PipelineReport;
use crate::dedup::{embed, extract_features, DEFAULT_DIM, DEFAULT_KEYPHRASES};
use crate::filter::{dup_line_fraction, top_ngram_fraction};
use crate::ngram_lm::NgramLM;

pub const DEFAULT_MIN_QUALITY: f64 = 7.0;
pub const DEFAULT_DUP_COS: f64 = 0.98;

#[derive(Debug, Error)]
pub enum SftError {
    #[error("pattern `{pattern}` does not compile: {source}")]
    RegexCompile {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid sft config: {0}")]
    InvalidConfig(String),
    #[error("scorer failed on pair `{0}`")]
    ScorerFailure(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftPair {
    pub id: String,
    pub prompt: String,
    pub response: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
}

impl SftPair {
    pub fn new(id: &str, prompt: &str, response: &str, origin: &str) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            response: response.into(),
            origin: origin.into(),
            quality_score: None,
        }
    }

    /// Text used for semantic dedup.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.prompt, self.response)
    }
}

/// Reads SFT JSONL. Pairs with an empty prompt or response are rejected.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<SftPair>, SftError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: SftPair = serde_json::from_str(&line).map_err(|e| SftError::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if p.prompt.trim().is_empty() || p.response.trim().is_empty() {
            return Err(SftError::Malformed {
                line: i + 1,
                msg: format!("pair `{}` has an empty prompt or response", p.id),
            });
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftCleanConfig {
    pub rule_patterns: Vec<String>,
    pub min_quality: f64,
    pub dup_cos_threshold: f64,
}

impl Default for SftCleanConfig {
    fn default() -> Self {
        Self {
            rule_patterns: Vec::new(),
            min_quality: DEFAULT_MIN_QUALITY,
            dup_cos_threshold: DEFAULT_DUP_COS,
        }
    }
}

impl SftCleanConfig {
    pub fn validate(&self) -> Result<(), SftError> {
        if !(1.0..=10.0).contains(&self.min_quality) {
            return Err(SftError::InvalidConfig(format!(
                "min_quality must be in [1, 10], got {}",
                self.min_quality
            )));
        }
        if !(self.dup_cos_threshold > 0.0 && self.dup_cos_threshold <= 1.0) {
            return Err(SftError::InvalidConfig(format!(
                "dup_cos_threshold must be in (0, 1], got {}",
                self.dup_cos_threshold
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- rules

#[derive(Debug, Clone)]
pub struct RuleFilter {
    rules: Vec<(String, Regex)>,
}

impl RuleFilter {
    pub fn new(patterns: &[String]) -> Result<Self, SftError> {
        let rules = patterns
            .iter()
            .map(|p| {
                Regex::new(p)
                    .map(|re| (p.clone(), re))
                    .map_err(|source| SftError::RegexCompile {
                        pattern: p.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    /// `Some("rule:<pattern>")` for the first matching pattern.
    pub fn check(&self, pair: &SftPair) -> Option<String> {
        self.rules
            .iter()
            .find(|(_, re)| re.is_match(&pair.prompt) || re.is_match(&pair.response))
            .map(|(p, _)| format!("rule:{p}"))
    }
}

pub fn rule_filter(pair: &SftPair, cfg: &SftCleanConfig) -> Result<Option<String>, SftError> {
    Ok(RuleFilter::new(&cfg.rule_patterns)?.check(pair))
}

// ---------------------------------------------------------------- quality

/// Scores a pair on `[1, 10]`.
pub trait QualityScorer: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, pair: &SftPair) -> Result<f64, SftError>;
}

/// `1 + 9 * q` where `q` multiplies length, repetition, prompt-echo and
/// (optionally) perplexity factors, each in `[0, 1]`:
///
/// - length: `min(1, response_words / 8)`
/// - repetition: `(1 - dup_line_fraction) * (1 - top_ngram_fraction)`
/// - echo: `0.3` when the response repeats the prompt verbatim
/// - perplexity: `min(1, 1000 / ppl)` of the response under `lm`
pub struct HeuristicScorer {
    lm: Option<NgramLM>,
}

impl HeuristicScorer {
    pub fn new(lm: Option<NgramLM>) -> Self {
        Self { lm }
    }
}

impl QualityScorer for HeuristicScorer {
    fn id(&self) -> &str {
        "heuristic"
    }

    fn score(&self, pair: &SftPair) -> Result<f64, SftError> {
        let r = pair.response.trim();
        let words = r.split_whitespace().count() as f64;
        let mut q = (words / 8.0).min(1.0);
        q *= (1.0 - dup_line_fraction(r)) * (1.0 - top_ngram_fraction(r));
        let p = pair.prompt.trim();
        if !p.is_empty() && r.contains(p) {
            q *= 0.3;
        }
        if let Some(lm) = &self.lm {
            if let Ok(s) = lm.score(r) {
                q *= (1000.0 / s.perplexity).min(1.0);
            }
        }
        Ok(1.0 + 9.0 * q.clamp(0.0, 1.0))
    }
}

/// Externally produced scores from JSONL rows `{"id": ..., "score": ...}`.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    scores: HashMap<String, f64>,
}

#[derive(Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
}

impl FileScorer {
    pub fn from_map(scores: HashMap<String, f64>) -> Self {
        Self { scores }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SftError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut scores = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ScoreRow = serde_json::from_str(&line).map_err(|e| SftError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            scores.insert(row.id, row.score);
        }
        Ok(Self { scores })
    }
}

impl QualityScorer for FileScorer {
    fn id(&self) -> &str {
        "file"
    }

    /// Missing ids and scores outside `[1, 10]` are scorer failures.
    fn score(&self, pair: &SftPair) -> Result<f64, SftError> {
        match self.scores.get(&pair.id) {
            Some(&s) if (1.0..=10.0).contains(&s) => Ok(s),
            _ => Err(SftError::ScorerFailure(pair.id.clone())),
        }
    }
}

/// Records the score on the pair and returns whether it passes.
pub fn quality_gate(pair: &mut SftPair, scorer: &dyn QualityScorer, min_quality: f64) -> Result<bool, SftError> {
    let s = scorer.score(pair)?;
    if !(1.0..=10.0).contains(&s) {
        return Err(SftError::ScorerFailure(pair.id.clone()));
    }
    pair.quality_score = Some(s);
    Ok(s >= min_quality)
}

// ---------------------------------------------------------------- semantic dedup

pub trait TextEmbedder: Send + Sync {
    fn embed(&self, id: &str, text: &str) -> Vec<f64>;
}

/// Keyphrase feature hashing from the dedup module.
#[derive(Debug, Clone, Copy)]
pub struct HashingTextEmbedder {
    pub dim: usize,
    pub keyphrases: usize,
}

impl Default for HashingTextEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            keyphrases: DEFAULT_KEYPHRASES,
        }
    }
}

impl TextEmbedder for HashingTextEmbedder {
    fn embed(&self, _id: &str, text: &str) -> Vec<f64> {
        let (kp, _) = extract_features(text, self.keyphrases);
        embed(&kp, self.dim)
    }
}

/// Stores normalized kept vectors; compares new pairs against all of them.
#[derive(Debug, Clone)]
pub struct SemanticDeduper {
    threshold: f64,
    kept: Vec<(String, Vec<f64>)>,
}

impl SemanticDeduper {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            kept: Vec::new(),
        }
    }

    /// First earlier kept pair whose cosine exceeds the threshold.
    pub fn find(&self, v: &[f64]) -> Option<(&str, f64)> {
        self.kept.iter().find_map(|(id, k)| {
            let c = crate::dedup::cosine(v, k);
            (c > self.threshold).then_some((id.as_str(), c))
        })
    }

    /// Inserts `v` unless it duplicates a kept vector; returns true if kept.
    pub fn offer(&mut self, id: &str, v: Vec<f64>) -> bool {
        if self.find(&v).is_some() {
            return false;
        }
        self.kept.push((id.to_string(), v));
        true
    }
}

pub fn semantic_dedup(pairs: Vec<SftPair>, threshold: f64, embedder: &dyn TextEmbedder) -> (Vec<SftPair>, usize) {
    let mut d = SemanticDeduper::new(threshold);
    let n = pairs.len();
    let kept: Vec<SftPair> = pairs
        .into_iter()
        .filter(|p| d.offer(&p.id, embedder.embed(&p.id, &p.embedding_text())))
        .collect();
    let dropped = n - kept.len();
    (kept, dropped)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftOutcome {
    /// Trusted pairs first, then cleaned pairs in input order.
    pub kept: Vec<SftPair>,
    pub retry: Vec<SftPair>,
    /// Covers the untrusted pairs only. Retry-queued pairs are counted under
    /// `retry_queue` so the report still reconciles.
    pub report: PipelineReport,
    pub trusted: u64,
}

pub struct SftCleaner<'a> {
    cfg: SftCleanConfig,
    rules: RuleFilter,
    scorer: &'a dyn QualityScorer,
    embedder: &'a dyn TextEmbedder,
}

impl<'a> SftCleaner<'a> {
    pub fn new(
        cfg: SftCleanConfig,
        scorer: &'a dyn QualityScorer,
        embedder: &'a dyn TextEmbedder,
    ) -> Result<Self, SftError> {
        cfg.validate()?;
        Ok(Self {
            rules: RuleFilter::new(&cfg.rule_patterns)?,
            cfg,
            scorer,
            embedder,
        })
    }

    pub fn run(&self, pairs: Vec<SftPair>, trusted: Vec<SftPair>) -> SftOutcome {
        let mut report = PipelineReport::new("sft_clean");
        let mut dedup = SemanticDeduper::new(self.cfg.dup_cos_threshold);
        let n_trusted = trusted.len() as u64;
        let mut kept = trusted;
        let mut retry = Vec::new();
        for mut p in pairs {
            if let Some(reason) = self.rules.check(&p) {
                report.record_dropped(reason);
                continue;
            }
            match quality_gate(&mut p, self.scorer, self.cfg.min_quality) {
                Err(_) => {
                    report.record_dropped("retry_queue");
                    retry.push(p);
                    continue;
                }
                Ok(false) => {
                    report.record_dropped("quality");
                    continue;
                }
                Ok(true) => {}
            }
            if dedup.offer(&p.id, self.embedder.embed(&p.id, &p.embedding_text())) {
                report.record_kept();
                kept.push(p);
            } else {
                report.record_dropped("dedup");
            }
        }
        SftOutcome {
            kept,
            retry,
            report,
            trusted: n_trusted,
        }
    }
}
