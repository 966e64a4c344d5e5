//! Staged data-mixture planning and training-schedule arithmetic.
//!
//! A plan is a sequence of [`StageSpec`]s, each with a token budget, a source
//! mix and a language mix. [`plan_stages`] turns a document inventory into one
//! [`Manifest`] per stage: disjoint shard slices whose estimated tokens meet
//! the budget, interleaved so every prefix of the stage follows its mix.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_shard_strict, CorpusError, Document};
use crate::text::seeded_hash;
use crate::tokenizer::BpeVocab;
use crate::Scalar;

pub const PRIMARY_MASS_MIN: f64 = 0.90;
pub const BUDGET_TOLERANCE: f64 = 0.01;
pub const MIX_TOLERANCE: f64 = 0.02;
pub const DEFAULT_SLICE_DOCS: usize = 32;
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("insufficient tokens for ({data_source}, {lang}): need {needed}, have {available}")]
    InsufficientTokens {
        data_source: String,
        lang: String,
        needed: u64,
        available: u64,
    },
    #[error("stage `{stage}` cannot meet its mix: {detail}")]
    MixInfeasible { stage: String, detail: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("tokens per step overflows")]
    Overflow,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub token_budget: u64,
    pub mix: BTreeMap<String, f64>,
    pub lang_mix: BTreeMap<String, f64>,
    pub complexity_rank: i64,
    #[serde(default)]
    pub primary_sources: Vec<String>,
    #[serde(default)]
    pub primary_langs: Vec<String>,
}

impl StageSpec {
    pub fn primary_source_mass(&self) -> f64 {
        self.primary_sources
            .iter()
            .filter_map(|s| self.mix.get(s))
            .sum()
    }

    pub fn primary_lang_mass(&self) -> f64 {
        self.primary_langs
            .iter()
            .filter_map(|l| self.lang_mix.get(l))
            .sum()
    }

    /// Target tokens per `(source, lang)` cell: budget × mix × lang_mix.
    pub fn cell_targets(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for (s, &ms) in &self.mix {
            for (l, &ml) in &self.lang_mix {
                if ms > 0.0 && ml > 0.0 {
                    out.insert((s.clone(), l.clone()), self.token_budget as f64 * ms * ml);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
    pub total_tokens: u64,
}

impl StagePlan {
    pub fn new(stages: Vec<StageSpec>) -> Self {
        let total_tokens = stages.iter().map(|s| s.token_budget).sum();
        Self {
            stages,
            total_tokens,
        }
    }

    /// Multiplies every budget by `factor`, rounding to the nearest token.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.stages
                .iter()
                .map(|s| StageSpec {
                    token_budget: (s.token_budget as f64 * factor).round() as u64,
                    ..s.clone()
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub stage: Option<String>,
    pub code: String,
    pub detail: String,
}

pub fn validate_plan(plan: &StagePlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |stage: Option<&str>, code: &str, detail: String| {
        out.push(Violation {
            stage: stage.map(str::to_string),
            code: code.to_string(),
            detail,
        })
    };
    if plan.total_tokens != plan.stages.iter().map(|s| s.token_budget).sum::<u64>() {
        v(None, "total_mismatch", "total_tokens != sum of stage budgets".into());
    }
    for w in plan.stages.windows(2) {
        if w[1].complexity_rank < w[0].complexity_rank {
            v(
                Some(&w[1].name),
                "complexity_not_monotone",
                format!(
                    "rank {} follows rank {} of `{}`",
                    w[1].complexity_rank, w[0].complexity_rank, w[0].name
                ),
            );
        }
    }
    for s in &plan.stages {
        let name = Some(s.name.as_str());
        if s.token_budget == 0 {
            v(name, "zero_budget", "token_budget must be positive".into());
        }
        for (code, m) in [("mix_not_normalized", &s.mix), ("lang_mix_not_normalized", &s.lang_mix)] {
            let sum: f64 = m.values().sum();
            if (sum - 1.0).abs() > RATIO_EPS || m.values().any(|&x| x < 0.0 || !x.is_finite()) {
                v(name, code, format!("ratios sum to {sum}"));
            }
        }
        let (ps, pl) = (s.primary_source_mass(), s.primary_lang_mass());
        if ps < PRIMARY_MASS_MIN - RATIO_EPS || pl < PRIMARY_MASS_MIN - RATIO_EPS {
            v(
                name,
                "primary_mass_below_0.90",
                format!("primary sources {ps:.4}, primary languages {pl:.4}"),
            );
        }
    }
    out
}

/// Three-stage curriculum: common-knowledge sources in English and Chinese
/// first, then books and academic text, then code, with Japanese and Korean
/// growing in later stages. Budgets are 600, 500 and 900 units of `scale`
/// tokens; `scale = 1e9` gives the full-size plan.
pub fn curriculum_preset(scale: f64) -> StagePlan {
    fn m(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }
    fn l(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }
    let stage = |name: &str, budget: f64, mix, lang_mix, rank, ps: &[&str], pl: &[&str]| StageSpec {
        name: name.into(),
        token_budget: (budget * scale).round() as u64,
        mix,
        lang_mix,
        complexity_rank: rank,
        primary_sources: l(ps),
        primary_langs: l(pl),
    };
    let all_langs = ["en", "zh", "ja", "ko"];
    StagePlan::new(vec![
        stage(
            "early",
            600.0,
            m(&[("web", 0.60), ("news", 0.35), ("book", 0.03), ("academic", 0.02)]),
            m(&[("en", 0.50), ("zh", 0.45), ("ja", 0.03), ("ko", 0.02)]),
            1,
            &["web", "news"],
            &["en", "zh"],
        ),
        stage(
            "middle",
            500.0,
            m(&[("web", 0.40), ("news", 0.20), ("book", 0.20), ("academic", 0.15), ("code", 0.05)]),
            m(&[("en", 0.45), ("zh", 0.40), ("ja", 0.08), ("ko", 0.07)]),
            2,
            &["web", "news", "book", "academic"],
            &all_langs,
        ),
        stage(
            "final",
            900.0,
            m(&[("web", 0.30), ("news", 0.15), ("book", 0.20), ("academic", 0.20), ("code", 0.15)]),
            m(&[("en", 0.40), ("zh", 0.35), ("ja", 0.13), ("ko", 0.12)]),
            3,
            &["web", "news", "book", "academic", "code"],
            &all_langs,
        ),
    ])
}

// ---------------------------------------------------------------- inventory

/// Per-document token estimate.
#[derive(Debug, Clone)]
pub enum TokenEstimator {
    Bpe(Box<BpeVocab>),
    CharsPerToken {
        by_lang: BTreeMap<String, f64>,
        default: f64,
    },
}

impl Default for TokenEstimator {
    /// Characters per token: en 4.0, zh 1.5, ja 1.5, ko 2.0, otherwise 3.0.
    fn default() -> Self {
        TokenEstimator::CharsPerToken {
            by_lang: [("en", 4.0), ("zh", 1.5), ("ja", 1.5), ("ko", 2.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            default: 3.0,
        }
    }
}

impl TokenEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            TokenEstimator::Bpe(_) => "bpe",
            TokenEstimator::CharsPerToken { .. } => "chars_per_token",
        }
    }

    pub fn estimate(&self, doc: &Document) -> u64 {
        match self {
            TokenEstimator::Bpe(v) => v.encode(&doc.text).len() as u64,
            TokenEstimator::CharsPerToken { by_lang, default } => {
                let chars = doc.text.chars().count();
                if chars == 0 {
                    return 0;
                }
                let base = doc.lang.split(['-', '_']).next().unwrap_or("");
                let cpt = by_lang.get(&doc.lang).or_else(|| by_lang.get(base)).unwrap_or(default);
                ((chars as f64 / cpt).ceil() as u64).max(1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Slice {
    shard: usize,
    start: usize,
    end: usize,
}

/// Documents available for scheduling, grouped into same-cell slices.
#[derive(Debug, Clone)]
pub struct Inventory {
    estimator_name: String,
    shards: Vec<String>,
    doc_tokens: Vec<Vec<u64>>,
    cells: BTreeMap<(String, String), Vec<Slice>>,
    slice_docs: usize,
}

impl Inventory {
    pub fn new(estimator: &TokenEstimator) -> Self {
        Self {
            estimator_name: estimator.name().to_string(),
            shards: Vec::new(),
            doc_tokens: Vec::new(),
            cells: BTreeMap::new(),
            slice_docs: DEFAULT_SLICE_DOCS,
        }
    }

    /// Maximum documents per slice when splitting same-cell runs.
    pub fn with_slice_docs(mut self, n: usize) -> Self {
        self.slice_docs = n.max(1);
        self
    }

    pub fn add_shard(&mut self, path: &str, docs: &[Document], est: &TokenEstimator) {
        let shard = self.shards.len();
        self.shards.push(path.to_string());
        self.doc_tokens.push(docs.iter().map(|d| est.estimate(d)).collect());
        let mut i = 0;
        while i < docs.len() {
            let key = (docs[i].source.clone(), docs[i].lang.clone());
            let mut j = i + 1;
            while j < docs.len() && j - i < self.slice_docs && (docs[j].source.as_str(), docs[j].lang.as_str()) == (key.0.as_str(), key.1.as_str()) {
                j += 1;
            }
            self.cells
                .entry(key)
                .or_default()
                .push(Slice { shard, start: i, end: j });
            i = j;
        }
    }

    pub fn from_shards<P: AsRef<Path>>(paths: &[P], est: &TokenEstimator) -> Result<Self, ScheduleError> {
        let mut inv = Self::new(est);
        for p in paths {
            let docs = read_shard_strict(p.as_ref())?;
            inv.add_shard(&p.as_ref().to_string_lossy(), &docs, est);
        }
        Ok(inv)
    }

    fn slice_tokens(&self, s: &Slice) -> u64 {
        self.doc_tokens[s.shard][s.start..s.end].iter().sum()
    }

    /// Available tokens per `(source, lang)`.
    pub fn totals(&self) -> BTreeMap<(String, String), u64> {
        self.cells
            .iter()
            .map(|(k, slices)| (k.clone(), slices.iter().map(|s| self.slice_tokens(s)).sum()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shard: String,
    pub start_doc: usize,
    /// Exclusive.
    pub end_doc: usize,
    pub est_tokens: u64,
    pub source: String,
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage_name: String,
    pub complexity_rank: i64,
    pub token_budget: u64,
    pub total_tokens: u64,
    pub estimator: String,
    pub realized_mix: BTreeMap<String, f64>,
    pub realized_lang_mix: BTreeMap<String, f64>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn budget_error(&self) -> f64 {
        (self.total_tokens as f64 - self.token_budget as f64).abs() / self.token_budget as f64
    }

    /// Largest absolute difference between realized and requested source mix.
    pub fn mix_error(&self, spec: &StageSpec) -> f64 {
        let keys: BTreeSet<&String> = spec.mix.keys().chain(self.realized_mix.keys()).collect();
        keys.into_iter()
            .map(|k| {
                (self.realized_mix.get(k).copied().unwrap_or(0.0) - spec.mix.get(k).copied().unwrap_or(0.0)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Assigns disjoint inventory slices to each stage.
///
/// Each `(source, lang)` cell's slices are visited in a seeded shuffled
/// order; whole slices are taken while they fit the cell target, then the
/// prefix of the next slice that lands closest to it. Within a stage, slices
/// from different cells are interleaved by stride scheduling on per-cell
/// progress.
pub fn plan_stages(inventory: &Inventory, specs: &[StageSpec], seed: u64) -> Result<Vec<Manifest>, ScheduleError> {
    let plan = StagePlan::new(specs.to_vec());
    let violations = validate_plan(&plan);
    if !violations.is_empty() {
        let codes: Vec<String> = violations
            .iter()
            .map(|v| format!("{}:{}", v.stage.as_deref().unwrap_or("plan"), v.code))
            .collect();
        return Err(ScheduleError::InvalidPlan(codes.join(", ")));
    }

    let mut pools: BTreeMap<(String, String), Vec<Slice>> = BTreeMap::new();
    for (key, slices) in &inventory.cells {
        let mut s = slices.clone();
        let cell_seed = seeded_hash(seed, &format!("{}\u{1f}{}", key.0, key.1));
        s.shuffle(&mut ChaCha8Rng::seed_from_u64(cell_seed));
        // consumed from the back
        s.reverse();
        pools.insert(key.clone(), s);
    }

    let mut manifests = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut picked: BTreeMap<(String, String), Vec<(Slice, u64)>> = BTreeMap::new();
        for (key, target) in spec.cell_targets() {
            let pool = pools.entry(key.clone()).or_default();
            let available: u64 = pool.iter().map(|s| inventory.slice_tokens(s)).sum();
            let needed = target.round() as u64;
            if available < needed {
                return Err(ScheduleError::InsufficientTokens {
                    data_source: key.0,
                    lang: key.1,
                    needed,
                    available,
                });
            }
            let mut taken = 0u64;
            let mut got = Vec::new();
            while let Some(slice) = pool.pop() {
                let t = inventory.slice_tokens(&slice);
                if (taken + t) as f64 <= target {
                    taken += t;
                    got.push((slice, t));
                    continue;
                }
                let toks = &inventory.doc_tokens[slice.shard][slice.start..slice.end];
                let (mut best_k, mut best_err, mut acc) = (0, (target - taken as f64).abs(), 0u64);
                for (k, &dt) in toks.iter().enumerate() {
                    acc += dt;
                    let err = (target - (taken + acc) as f64).abs();
                    if err < best_err {
                        best_k = k + 1;
                        best_err = err;
                    }
                }
                if best_k > 0 {
                    let head = Slice {
                        end: slice.start + best_k,
                        ..slice.clone()
                    };
                    let t = inventory.slice_tokens(&head);
                    got.push((head, t));
                }
                if slice.start + best_k < slice.end {
                    pool.push(Slice {
                        start: slice.start + best_k,
                        ..slice
                    });
                }
                break;
            }
            picked.insert(key, got);
        }
        let manifest = interleave(inventory, spec, picked);
        if manifest.budget_error() > BUDGET_TOLERANCE {
            return Err(ScheduleError::MixInfeasible {
                stage: spec.name.clone(),
                detail: format!("budget error {:.4} exceeds {BUDGET_TOLERANCE}", manifest.budget_error()),
            });
        }
        if manifest.mix_error(spec) > MIX_TOLERANCE {
            return Err(ScheduleError::MixInfeasible {
                stage: spec.name.clone(),
                detail: format!("source mix error {:.4} exceeds {MIX_TOLERANCE}", manifest.mix_error(spec)),
            });
        }
        manifests.push(manifest);
    }
    Ok(manifests)
}

fn interleave(
    inventory: &Inventory,
    spec: &StageSpec,
    picked: BTreeMap<(String, String), Vec<(Slice, u64)>>,
) -> Manifest {
    struct Lane {
        key: (String, String),
        slices: std::vec::IntoIter<(Slice, u64)>,
        total: u64,
        done: u64,
    }
    let mut lanes: Vec<Lane> = picked
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(key, v)| Lane {
            total: v.iter().map(|(_, t)| t).sum::<u64>().max(1),
            key,
            slices: v.into_iter(),
            done: 0,
        })
        .collect();
    let mut entries = Vec::new();
    let (mut by_source, mut by_lang) = (BTreeMap::<String, u64>::new(), BTreeMap::<String, u64>::new());
    let mut total = 0u64;
    loop {
        // least-progressed lane first; ties by cell order
        let next = lanes
            .iter_mut()
            .filter(|l| l.slices.len() > 0)
            .min_by(|a, b| {
                let pa = a.done as f64 / a.total as f64;
                let pb = b.done as f64 / b.total as f64;
                pa.total_cmp(&pb)
            });
        let Some(lane) = next else { break };
        let (slice, t) = lane.slices.next().expect("non-empty lane");
        lane.done += t;
        total += t;
        *by_source.entry(lane.key.0.clone()).or_insert(0) += t;
        *by_lang.entry(lane.key.1.clone()).or_insert(0) += t;
        entries.push(ManifestEntry {
            shard: inventory.shards[slice.shard].clone(),
            start_doc: slice.start,
            end_doc: slice.end,
            est_tokens: t,
            source: lane.key.0.clone(),
            lang: lane.key.1.clone(),
        });
    }
    let frac = |m: BTreeMap<String, u64>| -> BTreeMap<String, f64> {
        m.into_iter()
            .map(|(k, v)| (k, if total == 0 { 0.0 } else { v as f64 / total as f64 }))
            .collect()
    };
    Manifest {
        stage_name: spec.name.clone(),
        complexity_rank: spec.complexity_rank,
        token_budget: spec.token_budget,
        total_tokens: total,
        estimator: inventory.estimator_name.clone(),
        realized_mix: frac(by_source),
        realized_lang_mix: frac(by_lang),
        entries,
    }
}

// ---------------------------------------------------------------- LR schedule

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `final_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule<F> {
    pub warmup_steps: u64,
    pub peak_lr: F,
    pub final_lr: F,
    pub total_steps: u64,
}

impl<F: Scalar> LrSchedule<F> {
    pub fn new(warmup_steps: u64, peak_lr: F, final_lr: F, total_steps: u64) -> Result<Self, ScheduleError> {
        if !(final_lr > F::zero() && final_lr <= peak_lr) {
            return Err(ScheduleError::InvalidSchedule("need 0 < final_lr <= peak_lr".into()));
        }
        if warmup_steps >= total_steps {
            return Err(ScheduleError::InvalidSchedule("need warmup_steps < total_steps".into()));
        }
        Ok(Self {
            warmup_steps,
            peak_lr,
            final_lr,
            total_steps,
        })
    }

    /// With zero warmup the decay starts at step 0, so `lr(0) == peak_lr`.
    pub fn lr_at(&self, step: u64) -> Result<F, ScheduleError> {
        if step > self.total_steps {
            return Err(ScheduleError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let f = |x: u64| F::from(x).expect("step fits the float type");
        if step == self.total_steps {
            return Ok(self.final_lr);
        }
        // Both branches equal peak_lr here; pin it so rounding cannot split them.
        if step == self.warmup_steps {
            return Ok(self.peak_lr);
        }
        if step < self.warmup_steps {
            return Ok(self.peak_lr * f(step) / f(self.warmup_steps));
        }
        let pi = F::from(std::f64::consts::PI).expect("pi");
        let two = F::one() + F::one();
        let progress = f(step - self.warmup_steps) / f(self.total_steps - self.warmup_steps);
        Ok(self.final_lr + (self.peak_lr - self.final_lr) * (F::one() + (pi * progress).cos()) / two)
    }
}

pub fn tokens_per_step(batch_size: u64, seq_len: u64) -> Result<u64, ScheduleError> {
    if batch_size == 0 {
        return Err(ScheduleError::NonPositive("batch_size"));
    }
    if seq_len == 0 {
        return Err(ScheduleError::NonPositive("seq_len"));
    }
    batch_size.checked_mul(seq_len).ok_or(ScheduleError::Overflow)
}
