//! Loss-differential contamination analysis: mean per-token loss on unseen
//! text versus evaluation text. A model that has memorized evaluation data
//! scores it much lower than comparable unseen text, so `delta = l_unseen -
//! l_eval` grows with leakage.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::ngram_lm::{LmError, NgramLM};

pub const DEFAULT_THRESHOLD: f64 = 0.35;

#[derive(Debug, Error)]
pub enum ContamError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(String),
    #[error("scorer failed on document `{0}`")]
    ScorerFailure(String),
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("nll file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Returns `(total_nll, token_count)` in nats for one document.
pub trait LmScorer: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, doc: &Document) -> Result<(f64, u64), ContamError>;
}

pub struct NgramScorer<'a> {
    lm: &'a NgramLM,
    id: String,
}

impl<'a> NgramScorer<'a> {
    pub fn new(lm: &'a NgramLM) -> Self {
        Self {
            id: format!("ngram-{}", lm.order()),
            lm,
        }
    }
}

impl LmScorer for NgramScorer<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    /// Texts with no words contribute nothing.
    fn score(&self, doc: &Document) -> Result<(f64, u64), ContamError> {
        match self.lm.score(&doc.text) {
            Ok(s) => Ok((s.total_nll, s.token_count)),
            Err(LmError::EmptyText) => Ok((0.0, 0)),
            Err(_) => Err(ContamError::ScorerFailure(doc.id.clone())),
        }
    }
}

/// Precomputed losses from JSONL rows `{"id", "total_nll", "token_count"}`.
#[derive(Debug, Clone, Default)]
pub struct NllFileScorer {
    rows: HashMap<String, (f64, u64)>,
}

#[derive(Deserialize)]
struct NllRow {
    id: String,
    total_nll: f64,
    token_count: u64,
}

impl NllFileScorer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContamError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut rows = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: NllRow = serde_json::from_str(&line).map_err(|e| ContamError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if !(r.total_nll >= 0.0 && r.total_nll.is_finite()) {
                return Err(ContamError::Malformed {
                    line: i + 1,
                    msg: "total_nll must be a finite non-negative number".into(),
                });
            }
            rows.insert(r.id, (r.total_nll, r.token_count));
        }
        Ok(Self { rows })
    }
}

impl LmScorer for NllFileScorer {
    fn id(&self) -> &str {
        "nll-file"
    }

    fn score(&self, doc: &Document) -> Result<(f64, u64), ContamError> {
        self.rows
            .get(&doc.id)
            .copied()
            .ok_or_else(|| ContamError::ScorerFailure(doc.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetLoss {
    pub l_eval: f64,
    pub n_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContamReport {
    pub scorer_id: String,
    pub l_unseen: f64,
    pub l_eval: f64,
    pub delta: f64,
    pub per_set: BTreeMap<String, SetLoss>,
    pub n_unseen_tokens: u64,
}

/// Sums `(nll, tokens)` over documents.
pub fn total_loss<'a, I>(scorer: &dyn LmScorer, docs: I) -> Result<(f64, u64), ContamError>
where
    I: IntoIterator<Item = &'a Document>,
{
    docs.into_iter().try_fold((0.0, 0u64), |(n, t), d| {
        let (dn, dt) = scorer.score(d)?;
        Ok((n + dn, t + dt))
    })
}

/// Token-weighted mean losses; `l_eval` pools all evaluation sets.
pub fn measure<S: AsRef<str>>(
    scorer: &dyn LmScorer,
    unseen: &[Document],
    eval_sets: &[(S, Vec<Document>)],
) -> Result<ContamReport, ContamError> {
    let (un, ut) = total_loss(scorer, unseen)?;
    if ut == 0 {
        return Err(ContamError::EmptyCorpus("unseen".into()));
    }
    let mut per_set = BTreeMap::new();
    let (mut en, mut et) = (0.0, 0u64);
    for (name, docs) in eval_sets {
        let (n, t) = total_loss(scorer, docs)?;
        if t > 0 {
            per_set.insert(
                name.as_ref().to_string(),
                SetLoss {
                    l_eval: n / t as f64,
                    n_tokens: t,
                },
            );
        }
        en += n;
        et += t;
    }
    if et == 0 {
        return Err(ContamError::EmptyCorpus("eval".into()));
    }
    let l_unseen = un / ut as f64;
    let l_eval = en / et as f64;
    Ok(ContamReport {
        scorer_id: scorer.id().to_string(),
        l_unseen,
        l_eval,
        delta: l_unseen - l_eval,
        per_set,
        n_unseen_tokens: ut,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Clean,
    Suspect,
    Overfit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub delta: f64,
    pub clean_max: f64,
    pub overfit_min: f64,
}

/// Clean when `delta <= t`, overfit when `delta >= 2t`, suspect between.
pub fn interpret(report: &ContamReport, threshold: f64) -> Result<Verdict, ContamError> {
    interpret_delta(report.delta, threshold)
}

pub fn interpret_delta(delta: f64, threshold: f64) -> Result<Verdict, ContamError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(ContamError::BadThreshold(threshold));
    }
    let overfit_min = 2.0 * threshold;
    let verdict = if delta <= threshold {
        VerdictKind::Clean
    } else if delta >= overfit_min {
        VerdictKind::Overfit
    } else {
        VerdictKind::Suspect
    };
    Ok(Verdict {
        verdict,
        delta,
        clean_max: threshold,
        overfit_min,
    })
}

/// Plain-text table: scorer, L_unseen, L_eval, delta, then one row per set.
pub fn render_table(report: &ContamReport, verdict: &Verdict) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>10} {:>10} {:>10}", "scorer", "L_unseen", "L_eval", "delta");
    let _ = writeln!(
        s,
        "{:<24} {:>10.4} {:>10.4} {:>10.4}",
        report.scorer_id, report.l_unseen, report.l_eval, report.delta
    );
    for (name, set) in &report.per_set {
        let _ = writeln!(
            s,
            "  {:<22} {:>10} {:>10.4} {:>10.4}",
            name,
            "",
            set.l_eval,
            report.l_unseen - set.l_eval
        );
    }
    let v = match verdict.verdict {
        VerdictKind::Clean => "clean",
        VerdictKind::Suspect => "suspect",
        VerdictKind::Overfit => "overfit",
    };
    let _ = writeln!(
        s,
        "verdict: {v} (clean <= {}, overfit >= {})",
        verdict.clean_max, verdict.overfit_min
    );
    s
}
