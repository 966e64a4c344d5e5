//! Per-document filters: harmful-content flagging with deterministic
//! retention, rule-based PII scrubbing, and heuristic quality gating.

use std::collections::{BTreeMap, HashMap};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::ngram_lm::NgramLM;
use crate::text::{hash_below_fraction, seeded_hash, tokenize_words};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("pattern `{pattern}` does not compile: {source}")]
    RegexCompile {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("{0} must be in [0, 1], got {1}")]
    OutOfRange(&'static str, f64),
    #[error("percentile mode needs at least one scored document")]
    NoScores,
}

fn compile(pattern: &str) -> Result<Regex, FilterError> {
    Regex::new(pattern).map_err(|source| FilterError::RegexCompile {
        pattern: pattern.to_string(),
        source,
    })
}

fn check_unit(name: &'static str, v: f64) -> Result<(), FilterError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(FilterError::OutOfRange(name, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub reasons: Vec<String>,
    pub quality_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

impl FilterVerdict {
    fn clean() -> Self {
        Self {
            keep: true,
            reasons: Vec::new(),
            quality_score: 1.0,
            perplexity: None,
        }
    }
}

// ---------------------------------------------------------------- harm

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmPolicy {
    /// category -> keywords, matched case-insensitively as substrings
    pub keyword_lists: BTreeMap<String, Vec<String>>,
    /// flagged under category `pattern`
    pub patterns: Vec<String>,
    pub retain_fraction: f64,
    pub seed: u64,
}

impl Default for HarmPolicy {
    fn default() -> Self {
        Self {
            keyword_lists: BTreeMap::new(),
            patterns: Vec::new(),
            retain_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Second-stage harmful-content scorer. Returns a probability in `[0, 1]`.
pub trait HarmClassifier: Send + Sync {
    fn harm_probability(&self, doc: &Document) -> f64;
}

/// Default second stage: never flags anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopClassifier;

impl HarmClassifier for NoopClassifier {
    fn harm_probability(&self, _doc: &Document) -> f64 {
        0.0
    }
}

pub struct HarmFilter {
    policy: HarmPolicy,
    keywords: Vec<(String, Regex)>,
    patterns: Vec<Regex>,
    classifier: Box<dyn HarmClassifier>,
    classifier_threshold: f64,
}

impl std::fmt::Debug for HarmFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HarmFilter").field("policy", &self.policy).finish()
    }
}

impl HarmFilter {
    pub fn new(policy: HarmPolicy) -> Result<Self, FilterError> {
        check_unit("retain_fraction", policy.retain_fraction)?;
        let mut keywords = Vec::new();
        for (cat, words) in &policy.keyword_lists {
            let words: Vec<String> = words
                .iter()
                .filter(|w| !w.is_empty())
                .map(|w| regex::escape(w))
                .collect();
            if words.is_empty() {
                continue;
            }
            let alt = words.join("|");
            let re = RegexBuilder::new(&alt)
                .case_insensitive(true)
                .build()
                .map_err(|source| FilterError::RegexCompile {
                    pattern: alt.clone(),
                    source,
                })?;
            keywords.push((cat.clone(), re));
        }
        let patterns = policy
            .patterns
            .iter()
            .map(|p| compile(p))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            policy,
            keywords,
            patterns,
            classifier: Box::new(NoopClassifier),
            classifier_threshold: 0.5,
        })
    }

    pub fn with_classifier(mut self, c: Box<dyn HarmClassifier>, threshold: f64) -> Self {
        self.classifier = c;
        self.classifier_threshold = threshold;
        self
    }

    /// Categories whose keywords or patterns match, in category order.
    pub fn flagged_categories(&self, doc: &Document) -> Vec<String> {
        let mut cats: Vec<String> = self
            .keywords
            .iter()
            .filter(|(_, re)| re.is_match(&doc.text))
            .map(|(c, _)| c.clone())
            .collect();
        if self.patterns.iter().any(|re| re.is_match(&doc.text)) {
            cats.push("pattern".into());
        }
        if self.classifier.harm_probability(doc) >= self.classifier_threshold {
            cats.push("classifier".into());
        }
        cats
    }

    /// Whether a flagged document survives: `hash(seed, id) < fraction · 2^64`.
    pub fn retained(&self, doc_id: &str) -> bool {
        hash_below_fraction(
            seeded_hash(self.policy.seed, doc_id),
            self.policy.retain_fraction,
        )
    }

    pub fn check(&self, doc: &Document) -> FilterVerdict {
        let cats = self.flagged_categories(doc);
        if cats.is_empty() {
            return FilterVerdict::clean();
        }
        let mut reasons: Vec<String> = cats.into_iter().map(|c| format!("harm:{c}")).collect();
        let keep = self.retained(&doc.id);
        if keep {
            reasons.push("harm_retained".into());
        }
        FilterVerdict {
            keep,
            reasons,
            quality_score: 0.0,
            perplexity: None,
        }
    }
}

pub fn harm_filter(doc: &Document, policy: &HarmPolicy) -> Result<FilterVerdict, FilterError> {
    Ok(HarmFilter::new(policy.clone())?.check(doc))
}

// ---------------------------------------------------------------- pii

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiKind {
    Email,
    Phone,
    IdNumber,
    Address,
    NameList,
}

impl PiiKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            PiiKind::Email => "[EMAIL]",
            PiiKind::Phone => "[PHONE]",
            PiiKind::IdNumber => "[ID_NUMBER]",
            PiiKind::Address => "[ADDRESS]",
            PiiKind::NameList => "[NAME_LIST]",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiAction {
    #[default]
    Placeholder,
    DropSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiiRules {
    /// Applied in order; put broader detectors after narrower ones.
    pub detectors: Vec<(PiiKind, String)>,
    pub action: PiiAction,
}

impl Default for PiiRules {
    fn default() -> Self {
        Self {
            detectors: vec![
                (
                    PiiKind::Email,
                    r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}".into(),
                ),
                // mainland resident id (18 chars) and US SSN
                (
                    PiiKind::IdNumber,
                    r"\b[1-9]\d{5}(?:19|20)\d{2}(?:0[1-9]|1[0-2])(?:0[1-9]|[12]\d|3[01])\d{3}[\dXx]\b|\b\d{3}-\d{2}-\d{4}\b".into(),
                ),
                (
                    PiiKind::Phone,
                    r"(?:\+\d{1,3}[\s.-]?)?(?:\(\d{3}\)\s?|\b\d{3}[\s.-])\d{3}[\s.-]\d{4}\b|\b1[3-9]\d{9}\b".into(),
                ),
                (
                    PiiKind::Address,
                    r"\b\d{1,5}\s+(?:[A-Z][a-z]+\s+){1,3}(?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Lane|Ln|Drive|Dr)\b\.?".into(),
                ),
            ],
            action: PiiAction::Placeholder,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PiiScrubber {
    detectors: Vec<(PiiKind, Regex)>,
    action: PiiAction,
}

// Placeholders never match the shipped detectors, so a second sweep is
// normally a no-op; the bound covers user regexes that do.
const PII_MAX_SWEEPS: usize = 4;

impl PiiScrubber {
    pub fn new(rules: &PiiRules) -> Result<Self, FilterError> {
        let detectors = rules
            .detectors
            .iter()
            .map(|(k, p)| compile(p).map(|re| (*k, re)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            detectors,
            action: rules.action,
        })
    }

    fn sweep(&self, text: &str) -> String {
        let mut s = text.to_string();
        for (kind, re) in &self.detectors {
            let rep = match self.action {
                PiiAction::Placeholder => kind.placeholder(),
                PiiAction::DropSpan => "",
            };
            let mut out = String::with_capacity(s.len());
            let mut last = 0;
            for m in re.find_iter(&s) {
                if m.is_empty() || &s[m.range()] == rep {
                    continue;
                }
                out.push_str(&s[last..m.start()]);
                out.push_str(rep);
                last = m.end();
            }
            out.push_str(&s[last..]);
            s = out;
        }
        s
    }

    pub fn scrub_text(&self, text: &str) -> String {
        let mut cur = self.sweep(text);
        for _ in 1..PII_MAX_SWEEPS {
            let next = self.sweep(&cur);
            if next == cur {
                break;
            }
            cur = next;
        }
        cur
    }

    pub fn scrub(&self, doc: &Document) -> Document {
        Document {
            text: self.scrub_text(&doc.text),
            ..doc.clone()
        }
    }
}

pub fn pii_scrub(doc: &Document, rules: &PiiRules) -> Result<Document, FilterError> {
    Ok(PiiScrubber::new(rules)?.scrub(doc))
}

// ---------------------------------------------------------------- quality

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PerplexityGate {
    /// Drop documents above `max_perplexity`.
    Absolute,
    /// Drop the top `percent`% of a batch; needs a scoring pass first.
    Percentile { percent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    pub max_perplexity: f64,
    pub max_dup_line_fraction: f64,
    pub max_top_ngram_fraction: f64,
    pub min_chars: usize,
    pub max_symbol_ratio: f64,
    pub perplexity_gate: PerplexityGate,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            max_perplexity: 1.0e4,
            max_dup_line_fraction: 0.30,
            max_top_ngram_fraction: 0.18,
            min_chars: 50,
            max_symbol_ratio: 0.40,
            perplexity_gate: PerplexityGate::Absolute,
        }
    }
}

impl QualityThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        check_unit("max_dup_line_fraction", self.max_dup_line_fraction)?;
        check_unit("max_top_ngram_fraction", self.max_top_ngram_fraction)?;
        check_unit("max_symbol_ratio", self.max_symbol_ratio)?;
        if let PerplexityGate::Percentile { percent } = self.perplexity_gate {
            if !(0.0..=100.0).contains(&percent) {
                return Err(FilterError::OutOfRange("percentile", percent));
            }
        }
        Ok(())
    }
}

/// Fraction of non-blank lines that repeat an earlier line.
pub fn dup_line_fraction(text: &str) -> f64 {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return 0.0;
    }
    let mut seen = std::collections::HashSet::new();
    let dups = lines.iter().filter(|l| !seen.insert(**l)).count();
    dups as f64 / lines.len() as f64
}

/// Character mass covered by occurrences of the most frequent word 3-gram,
/// relative to all word characters. Zero when no 3-gram repeats.
pub fn top_ngram_fraction(text: &str) -> f64 {
    let words = tokenize_words(text);
    if words.len() < 3 {
        return 0.0;
    }
    let total: usize = words.iter().map(|w| w.chars().count()).sum();
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    for g in words.windows(3) {
        *counts.entry(g).or_insert(0) += 1;
    }
    let best = counts
        .iter()
        .max_by(|a, b| {
            let la: usize = a.0.iter().map(|w| w.chars().count()).sum();
            let lb: usize = b.0.iter().map(|w| w.chars().count()).sum();
            (a.1 * la).cmp(&(b.1 * lb)).then_with(|| b.0.cmp(a.0))
        })
        .map(|(g, &n)| (n, g.iter().map(|w| w.chars().count()).sum::<usize>()));
    match best {
        Some((n, len)) if n > 1 => ((n * len) as f64 / total as f64).min(1.0),
        _ => 0.0,
    }
}

/// Non-alphanumeric, non-whitespace characters over non-whitespace characters.
pub fn symbol_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut sym = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if !c.is_alphanumeric() {
            sym += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        sym as f64 / total as f64
    }
}

// 1 when within limit, strictly below 1 otherwise.
fn subscore_max(value: f64, max: f64) -> f64 {
    if value <= max {
        1.0
    } else if max <= 0.0 {
        0.0
    } else {
        (max / value).min(1.0 - f64::EPSILON)
    }
}

#[derive(Debug, Clone)]
pub struct QualityFilter<'a> {
    lm: Option<&'a NgramLM>,
    th: QualityThresholds,
}

impl<'a> QualityFilter<'a> {
    pub fn new(lm: Option<&'a NgramLM>, th: QualityThresholds) -> Result<Self, FilterError> {
        th.validate()?;
        Ok(Self { lm, th })
    }

    pub fn thresholds(&self) -> &QualityThresholds {
        &self.th
    }

    pub fn perplexity(&self, doc: &Document) -> Option<f64> {
        self.lm
            .and_then(|lm| lm.score(&doc.text).ok())
            .map(|s| s.perplexity)
    }

    /// Switches an absolute gate to the batch's percentile cutoff.
    pub fn calibrate(&mut self, perplexities: &[f64]) -> Result<(), FilterError> {
        if let PerplexityGate::Percentile { percent } = self.th.perplexity_gate {
            self.th.max_perplexity = percentile_cutoff(perplexities, percent)?;
        }
        Ok(())
    }

    pub fn check(&self, doc: &Document) -> FilterVerdict {
        if doc.text.trim().is_empty() {
            return FilterVerdict {
                keep: false,
                reasons: vec!["empty".into()],
                quality_score: 0.0,
                perplexity: None,
            };
        }
        let th = &self.th;
        let mut reasons = Vec::new();
        let mut score = 1.0;

        let chars = doc.text.chars().count();
        if chars < th.min_chars {
            reasons.push("too_short".to_string());
            score *= chars as f64 / th.min_chars as f64;
        }
        let dup = dup_line_fraction(&doc.text);
        if dup > th.max_dup_line_fraction {
            reasons.push("dup_lines".into());
        }
        score *= subscore_max(dup, th.max_dup_line_fraction);

        let top = top_ngram_fraction(&doc.text);
        if top > th.max_top_ngram_fraction {
            reasons.push("top_ngram".into());
        }
        score *= subscore_max(top, th.max_top_ngram_fraction);

        let sym = symbol_ratio(&doc.text);
        if sym > th.max_symbol_ratio {
            reasons.push("symbol_ratio".into());
        }
        score *= subscore_max(sym, th.max_symbol_ratio);

        let perplexity = self.perplexity(doc);
        if let Some(ppl) = perplexity {
            if ppl > th.max_perplexity {
                reasons.push("perplexity".into());
            }
            score *= subscore_max(ppl, th.max_perplexity);
        }
        FilterVerdict {
            keep: reasons.is_empty(),
            reasons,
            quality_score: score,
            perplexity,
        }
    }
}

pub fn quality_filter(
    doc: &Document,
    lm: Option<&NgramLM>,
    th: &QualityThresholds,
) -> Result<FilterVerdict, FilterError> {
    Ok(QualityFilter::new(lm, th.clone())?.check(doc))
}

/// Perplexity above which the top `percent`% of `values` lie.
/// Uses the nearest-rank method on the sorted values.
pub fn percentile_cutoff(values: &[f64], percent: f64) -> Result<f64, FilterError> {
    if values.is_empty() {
        return Err(FilterError::NoScores);
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let keep = ((1.0 - percent / 100.0) * v.len() as f64).ceil() as usize;
    if keep == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(v[keep.min(v.len()) - 1])
}
