use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use corpusforge::contam::{self, LmScorer, NgramScorer, NllFileScorer};
use corpusforge::corpus::{expand_inputs, read_all, shard_path, write_shards, ShardWriter};
use corpusforge::dedup::{dedup_documents, Deduper, EvalScreen};
use corpusforge::filter::{FilterVerdict, HarmFilter, PerplexityGate, PiiScrubber, QualityFilter};
use corpusforge::normalize::Normalizer;
use corpusforge::schedule::{
    curriculum_preset, plan_stages, tokens_per_step, validate_plan, Inventory, LrSchedule,
    StagePlan,
};
use corpusforge::sft_clean::{
    read_pairs, FileScorer, HashingTextEmbedder, HeuristicScorer, QualityScorer, SftCleaner,
    SftPair,
};
use corpusforge::tokenizer::{compression_ratio, train_texts, BpeVocab};
use corpusforge::{synth, Document, NgramLM, PipelineReport};
use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{passthrough, RunReport};
use crate::Command;

// ---------------------------------------------------------------- args

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Input JSONL files or globs.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Rejected documents, each with its verdict attached.
    #[arg(long)]
    rejects: Option<PathBuf>,
    /// Harm policy JSON; replaces the config's `filter.harm`.
    #[arg(long)]
    harm: Option<PathBuf>,
    /// PII rules JSON; replaces `filter.pii`.
    #[arg(long)]
    pii: Option<PathBuf>,
    /// Quality thresholds JSON; replaces `filter.quality`.
    #[arg(long)]
    quality: Option<PathBuf>,
    /// N-gram model enabling the perplexity gate.
    #[arg(long)]
    lm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    cos: Option<f64>,
    /// Evaluation-set files; each file is one named set (its file stem).
    #[arg(long, num_args = 1..)]
    eval: Vec<String>,
    /// Persist the signature index here.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Per-document decisions as JSONL.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LmCommand {
    Train {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        discount: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-document scores as JSONL.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TokCommand {
    Train {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        coverage: Option<f64>,
        #[arg(long = "special")]
        specials: Vec<String>,
        #[arg(long)]
        presplit: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token ids per document as JSONL.
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compression ratio (tokens per character), per language.
    Cr {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        /// Restrict to one language; every language present otherwise.
        #[arg(long)]
        lang: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct PresetArg {
    /// Use the built-in curriculum, full-size budgets times this factor,
    /// instead of `schedule.stages`.
    #[arg(long)]
    preset: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCommand {
    /// One manifest JSON per stage.
    Plan {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        preset: PresetArg,
    },
    Validate {
        #[command(flatten)]
        preset: PresetArg,
    },
    Lr {
        #[arg(long)]
        warmup: Option<u64>,
        #[arg(long)]
        peak: Option<f64>,
        #[arg(long = "final")]
        final_lr: Option<f64>,
        #[arg(long)]
        total: Option<u64>,
        /// Steps to evaluate; defaults to start, warmup end, decay midpoint, end.
        #[arg(long = "step", num_args = 1..)]
        steps: Vec<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SftCommand {
    Clean {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// JSONL `{"id", "score"}` from an external scorer.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// N-gram model for the built-in heuristic scorer.
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Pass-through sets that skip cleaning.
        #[arg(long, num_args = 1..)]
        trusted: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct ContamArgs {
    /// An n-gram model file or a JSONL file of `{"id", "total_nll", "token_count"}`.
    #[arg(long)]
    scorer: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    unseen: Vec<String>,
    /// `name=glob`, repeatable.
    #[arg(long, required = true, num_args = 1.., value_parser = parse_named)]
    eval: Vec<(String, String)>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejects: Option<PathBuf>,
    /// Evaluation-set files; enables decontamination.
    #[arg(long, num_args = 1..)]
    eval: Vec<String>,
    #[arg(long)]
    lm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Mixed-quality multilingual pretraining corpus.
    Mini,
    /// Corpus with planted near-duplicate pairs.
    NearDup,
    /// Prompt/response pairs.
    Sft,
    /// Train, unseen and eval splits for contamination analysis.
    Contam,
    /// Multilingual tokenizer training text.
    Tokenizer,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_named(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((n, g)) if !n.is_empty() && !g.is_empty() => Ok((n.to_string(), g.to_string())),
        _ => Err(format!("expected name=glob, got `{s}`")),
    }
}

// ---------------------------------------------------------------- helpers

fn read_inputs(patterns: &[String]) -> Result<Vec<Document>, CliError> {
    let paths = expand_inputs(patterns)?;
    if paths.is_empty() {
        return Err(CliError::invalid(format!(
            "no input files match {patterns:?}"
        )));
    }
    let docs = read_all(&paths)?;
    info!("read {} documents from {} files", docs.len(), paths.len());
    Ok(docs)
}

/// One set per file, named by file stem; duplicate stems are an error.
fn read_eval_sets(patterns: &[String]) -> Result<Vec<(String, Vec<Document>)>, CliError> {
    let paths = expand_inputs(patterns)?;
    if paths.is_empty() {
        return Err(CliError::invalid(format!(
            "no eval files match {patterns:?}"
        )));
    }
    let mut names = BTreeSet::new();
    let mut sets = Vec::new();
    for p in paths {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !names.insert(name.clone()) {
            return Err(CliError::invalid(format!(
                "two eval files share the name `{name}`"
            )));
        }
        sets.push((name, read_all(std::slice::from_ref(&p))?));
    }
    Ok(sets)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::ConfigInvalid {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigInvalid {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn load_lm(path: &Path) -> Result<NgramLM, CliError> {
    Ok(NgramLM::load(BufReader::new(fs::File::open(path)?))?)
}

fn write_docs(
    docs: &[Document],
    dir: &Path,
    name: &str,
    per_shard: usize,
) -> Result<usize, CliError> {
    fs::create_dir_all(dir)?;
    Ok(write_shards(docs, dir, name, per_shard)?.len())
}

fn write_jsonl<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<(), CliError> {
    let mut out: Box<dyn Write> = match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Rejected<'a> {
    #[serde(flatten)]
    doc: &'a Document,
    verdict: &'a FilterVerdict,
}

// ---------------------------------------------------------------- stages

fn normalize_stage(
    docs: Vec<Document>,
    cfg: &RunConfig,
) -> Result<(Vec<Document>, PipelineReport), CliError> {
    let n = Normalizer::new(cfg.normalize.clone())?;
    let out: Vec<Document> = docs.par_iter().map(|d| n.normalize(d)).collect();
    let report = passthrough("normalize", out.len());
    Ok((out, report))
}

/// Harm check on the input text, then PII scrubbing, then quality gating on
/// the scrubbed text. A dropped document is counted under its first reason.
fn filter_stage(
    docs: Vec<Document>,
    cfg: &RunConfig,
    lm: Option<&NgramLM>,
) -> Result<
    (
        Vec<Document>,
        Vec<(Document, FilterVerdict)>,
        PipelineReport,
    ),
    CliError,
> {
    let harm = HarmFilter::new(cfg.filter.harm.clone())?;
    let pii = PiiScrubber::new(&cfg.filter.pii)?;
    let mut quality = QualityFilter::new(lm, cfg.filter.quality.clone())?;

    let staged: Vec<(Document, FilterVerdict)> = docs
        .par_iter()
        .map(|d| {
            let v = harm.check(d);
            let scrubbed = if v.keep { pii.scrub(d) } else { d.clone() };
            (scrubbed, v)
        })
        .collect();
    if matches!(
        cfg.filter.quality.perplexity_gate,
        PerplexityGate::Percentile { .. }
    ) && lm.is_some()
    {
        // Barrier: the cutoff depends on the whole batch.
        let ppl: Vec<f64> = staged
            .par_iter()
            .filter(|(_, v)| v.keep)
            .filter_map(|(d, _)| quality.perplexity(d))
            .collect();
        quality.calibrate(&ppl)?;
    }
    let verdicts: Vec<FilterVerdict> = staged
        .par_iter()
        .map(|(d, harm_v)| {
            if !harm_v.keep {
                return harm_v.clone();
            }
            let mut q = quality.check(d);
            if !harm_v.reasons.is_empty() {
                let mut reasons = harm_v.reasons.clone();
                reasons.append(&mut q.reasons);
                q.reasons = reasons;
            }
            q
        })
        .collect();

    let mut report = PipelineReport::new("filter");
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for ((d, _), v) in staged.into_iter().zip(verdicts) {
        if v.keep {
            report.record_kept();
            kept.push(d);
        } else {
            report.record_dropped(
                v.reasons
                    .first()
                    .cloned()
                    .unwrap_or_else(|| "unspecified".into()),
            );
            rejected.push((d, v));
        }
    }
    Ok((kept, rejected, report))
}

fn dedup_stage(
    docs: Vec<Document>,
    cfg: &RunConfig,
) -> Result<(Vec<Document>, Vec<Value>, Deduper<f64>, PipelineReport), CliError> {
    let mut deduper = Deduper::<f64>::new(cfg.dedup.clone())?;
    let (kept, decisions, report) = dedup_documents(docs, &mut deduper)?;
    let decisions = decisions
        .iter()
        .map(serde_json::to_value)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((kept, decisions, deduper, report))
}

fn decontam_stage(
    docs: Vec<Document>,
    cfg: &RunConfig,
    eval: &[String],
) -> Result<(Vec<Document>, Value, PipelineReport), CliError> {
    let sets = read_eval_sets(eval)?;
    let screen = EvalScreen::<f64>::build(cfg.dedup.clone(), &sets)?;
    let (kept, rep) = screen.filter(docs)?;
    let details = serde_json::to_value(&rep)?;
    Ok((kept, details, rep.to_pipeline_report()))
}

fn write_rejects(rejected: &[(Document, FilterVerdict)], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut w = ShardWriter::create(shard_path(dir, "rejects", 0))?;
    for (doc, verdict) in rejected {
        w.write_value(&Rejected { doc, verdict }, doc.text.len())?;
    }
    w.finish()?;
    Ok(())
}

// ---------------------------------------------------------------- dispatch

pub fn dispatch(cmd: Command, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    match cmd {
        Command::Normalize(a) => {
            let cfg = cfg.finalize()?;
            let docs = read_inputs(&a.input)?;
            let (out, r) = normalize_stage(docs, &cfg)?;
            let shards = write_docs(&out, &a.out, "part", cfg.docs_per_shard)?;
            RunReport::new("normalize", &cfg, vec![r], json!({ "shards": shards })).emit(report)
        }
        Command::Filter(a) => {
            let mut cfg = cfg;
            if let Some(p) = &a.harm {
                cfg.filter.harm = read_json(p)?;
            }
            if let Some(p) = &a.pii {
                cfg.filter.pii = read_json(p)?;
            }
            if let Some(p) = &a.quality {
                cfg.filter.quality = read_json(p)?;
            }
            let cfg = cfg.finalize()?;
            let lm = a.lm.as_deref().map(load_lm).transpose()?;
            let docs = read_inputs(&a.input)?;
            let (kept, rejected, r) = filter_stage(docs, &cfg, lm.as_ref())?;
            let shards = write_docs(&kept, &a.out, "part", cfg.docs_per_shard)?;
            if let Some(dir) = &a.rejects {
                write_rejects(&rejected, dir)?;
            }
            RunReport::new("filter", &cfg, vec![r], json!({ "shards": shards })).emit(report)
        }
        Command::Dedup(a) => {
            let mut cfg = cfg;
            if let Some(r) = a.radius {
                cfg.dedup.radius = r;
            }
            if let Some(c) = a.cos {
                cfg.dedup.cos_threshold = c;
            }
            let cfg = cfg.finalize()?;
            let docs = read_inputs(&a.input)?;
            if !a.eval.is_empty() {
                let (kept, details, r) = decontam_stage(docs, &cfg, &a.eval)?;
                let shards = write_docs(&kept, &a.out, "part", cfg.docs_per_shard)?;
                let details =
                    json!({ "mode": "decontaminate", "shards": shards, "decontam": details });
                return RunReport::new("dedup", &cfg, vec![r], details).emit(report);
            }
            let (kept, decisions, deduper, r) = dedup_stage(docs, &cfg)?;
            let shards = write_docs(&kept, &a.out, "part", cfg.docs_per_shard)?;
            if let Some(p) = &a.decisions {
                write_jsonl(&decisions, Some(p))?;
            }
            if let Some(dir) = &a.index {
                deduper.into_index().save(dir)?;
            }
            RunReport::new(
                "dedup",
                &cfg,
                vec![r],
                json!({ "mode": "dedup", "shards": shards }),
            )
            .emit(report)
        }
        Command::Lm(c) => lm(c, cfg.finalize()?, report),
        Command::Tok(c) => tok(c, cfg, report),
        Command::Schedule(c) => schedule(c, cfg, report),
        Command::Sft(c) => sft(c, cfg.finalize()?, report),
        Command::Contam(a) => contam_cmd(a, cfg, report),
        Command::Pipeline(a) => pipeline(a, cfg, report),
        Command::Synth(a) => synth_cmd(a, cfg.finalize()?, report),
    }
}

fn lm(c: LmCommand, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    match c {
        LmCommand::Train {
            input,
            order,
            discount,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(o) = order {
                cfg.lm.order = o;
            }
            if let Some(d) = discount {
                cfg.lm.discount = d;
            }
            let docs = read_inputs(&input)?;
            let model = NgramLM::train_with_discount(&docs, cfg.lm.order, cfg.lm.discount)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            model.save(&mut w)?;
            w.flush()?;
            let details = json!({ "order": model.order(), "vocab_size": model.vocab().len() });
            RunReport::new(
                "lm train",
                &cfg,
                vec![passthrough("lm_train", docs.len())],
                details,
            )
            .emit(report)
        }
        LmCommand::Score { model, input, out } => {
            let model = load_lm(&model)?;
            let docs = read_inputs(&input)?;
            let rows: Vec<Value> = docs
                .par_iter()
                .map(|d| match model.score(&d.text) {
                    Ok(s) => {
                        let mut v = serde_json::to_value(s).expect("scores serialize");
                        v["id"] = json!(d.id);
                        v
                    }
                    Err(e) => json!({ "id": d.id, "error": e.to_string() }),
                })
                .collect();
            write_jsonl(&rows, out.as_deref())?;
            if out.is_some() || report.is_some() {
                RunReport::new(
                    "lm score",
                    &cfg,
                    vec![passthrough("lm_score", docs.len())],
                    Value::Null,
                )
                .emit(report)?;
            }
            Ok(())
        }
    }
}

fn tok(c: TokCommand, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    match c {
        TokCommand::Train {
            input,
            vocab_size,
            coverage,
            specials,
            presplit,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(v) = vocab_size {
                cfg.tokenizer.target_vocab = v;
            }
            if let Some(c) = coverage {
                cfg.tokenizer.coverage = c;
            }
            if !specials.is_empty() {
                cfg.tokenizer.specials = specials;
            }
            cfg.tokenizer.presplit |= presplit;
            let cfg = cfg.finalize()?;
            let docs = read_inputs(&input)?;
            let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
            let vocab = train_texts(&texts, &cfg.tokenizer)?;
            vocab.save(&out)?;
            let details = json!({
                "size": vocab.size(),
                "merges": vocab.merges().len(),
                "promotions": vocab.promotions(),
            });
            RunReport::new(
                "tok train",
                &cfg,
                vec![passthrough("tok_train", docs.len())],
                details,
            )
            .emit(report)
        }
        TokCommand::Encode { vocab, input, out } => {
            let cfg = cfg.finalize()?;
            let vocab = BpeVocab::load(&vocab)?;
            let docs = read_inputs(&input)?;
            let rows: Vec<Value> = docs
                .par_iter()
                .map(|d| json!({ "id": d.id, "ids": vocab.encode(&d.text) }))
                .collect();
            write_jsonl(&rows, out.as_deref())?;
            if out.is_some() || report.is_some() {
                RunReport::new(
                    "tok encode",
                    &cfg,
                    vec![passthrough("tok_encode", docs.len())],
                    Value::Null,
                )
                .emit(report)?;
            }
            Ok(())
        }
        TokCommand::Cr { vocab, input, lang } => {
            let cfg = cfg.finalize()?;
            let vocab = BpeVocab::load(&vocab)?;
            let docs = read_inputs(&input)?;
            let langs: Vec<String> = match lang {
                Some(l) => vec![l],
                None => docs
                    .iter()
                    .map(|d| d.lang.clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let rows = langs
                .iter()
                .map(|l| compression_ratio(&vocab, &docs, l))
                .collect::<Result<Vec<_>, _>>()?;
            RunReport::new(
                "tok cr",
                &cfg,
                vec![passthrough("tok_cr", docs.len())],
                json!({ "cr": rows }),
            )
            .emit(report)
        }
    }
}

/// Unit of the built-in preset that yields its full-size budgets.
const FULL_SIZE: f64 = 1e9;

fn stage_plan(cfg: &RunConfig, preset: Option<f64>) -> StagePlan {
    match preset.or(cfg.schedule.preset_scale) {
        Some(scale) if cfg.schedule.stages.is_empty() || preset.is_some() => {
            curriculum_preset(FULL_SIZE).scaled(scale)
        }
        _ => StagePlan::new(cfg.schedule.stages.clone()),
    }
}

fn schedule(c: ScheduleCommand, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    match c {
        ScheduleCommand::Validate { preset } => {
            let cfg = cfg.finalize()?;
            let plan = stage_plan(&cfg, preset.preset);
            let violations = validate_plan(&plan);
            let ok = violations.is_empty();
            let details = json!({ "plan": plan, "valid": ok, "violations": violations });
            RunReport::new("schedule validate", &cfg, vec![], details).emit(report)?;
            if ok {
                Ok(())
            } else {
                Err(CliError::invalid(format!(
                    "plan has {} violation(s)",
                    violations.len()
                )))
            }
        }
        ScheduleCommand::Plan { input, out, preset } => {
            let cfg = cfg.finalize()?;
            let plan = stage_plan(&cfg, preset.preset);
            let violations = validate_plan(&plan);
            if !violations.is_empty() {
                let v = serde_json::to_string(&violations)?;
                return Err(CliError::invalid(format!("invalid plan: {v}")));
            }
            let est = cfg.estimator()?;
            let paths = expand_inputs(&input)?;
            if paths.is_empty() {
                return Err(CliError::invalid(format!("no input files match {input:?}")));
            }
            let inv =
                Inventory::from_shards(&paths, &est)?.with_slice_docs(cfg.schedule.slice_docs);
            let manifests = plan_stages(&inv, &plan.stages, cfg.seed)?;
            fs::create_dir_all(&out)?;
            let mut files = Vec::new();
            for (i, m) in manifests.iter().enumerate() {
                let name = format!("stage-{}-{}.json", i + 1, m.stage_name);
                let mut s = serde_json::to_string_pretty(m)?;
                s.push('\n');
                fs::write(out.join(&name), s)?;
                files.push(json!({
                    "file": name,
                    "total_tokens": m.total_tokens,
                    "budget_error": m.budget_error(),
                    "mix_error": m.mix_error(&plan.stages[i]),
                }));
            }
            RunReport::new("schedule plan", &cfg, vec![], json!({ "manifests": files }))
                .emit(report)
        }
        ScheduleCommand::Lr {
            warmup,
            peak,
            final_lr,
            total,
            steps,
        } => {
            let mut cfg = cfg;
            let lr = &mut cfg.schedule.lr;
            lr.warmup_steps = warmup.unwrap_or(lr.warmup_steps);
            lr.peak_lr = peak.unwrap_or(lr.peak_lr);
            lr.final_lr = final_lr.unwrap_or(lr.final_lr);
            lr.total_steps = total.unwrap_or(lr.total_steps);
            let cfg = cfg.finalize()?;
            let l = &cfg.schedule.lr;
            let s = LrSchedule::<f64>::new(l.warmup_steps, l.peak_lr, l.final_lr, l.total_steps)?;
            let steps = if steps.is_empty() {
                let mid = l.warmup_steps + (l.total_steps - l.warmup_steps) / 2;
                vec![0, l.warmup_steps, mid, l.total_steps]
            } else {
                steps
            };
            let points = steps
                .iter()
                .map(|&st| Ok(json!({ "step": st, "lr": s.lr_at(st)? })))
                .collect::<Result<Vec<_>, CliError>>()?;
            let tps = tokens_per_step(cfg.schedule.batch_size, cfg.schedule.seq_len)?;
            let details = json!({ "tokens_per_step": tps, "points": points });
            RunReport::new("schedule lr", &cfg, vec![], details).emit(report)
        }
    }
}

fn sft(c: SftCommand, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    let SftCommand::Clean {
        input,
        out,
        scores,
        lm,
        trusted,
    } = c;
    let read = |pats: &[String]| -> Result<Vec<SftPair>, CliError> {
        let mut all = Vec::new();
        for p in expand_inputs(pats)? {
            all.extend(read_pairs(&p)?);
        }
        Ok(all)
    };
    if expand_inputs(&input)?.is_empty() {
        return Err(CliError::invalid(format!("no input files match {input:?}")));
    }
    let pairs = read(&input)?;
    let trusted = read(&trusted)?;
    let scorer: Box<dyn QualityScorer> = match (&scores, &lm) {
        (Some(p), _) => Box::new(FileScorer::load(p)?),
        (None, Some(m)) => Box::new(HeuristicScorer::new(Some(load_lm(m)?))),
        (None, None) => Box::new(HeuristicScorer::new(None)),
    };
    let embedder = HashingTextEmbedder::default();
    let cleaner = SftCleaner::new(cfg.sft.clone(), scorer.as_ref(), &embedder)?;
    let outcome = cleaner.run(pairs, trusted);
    fs::create_dir_all(&out)?;
    write_jsonl(&outcome.kept, Some(&out.join("sft-00000.jsonl")))?;
    write_jsonl(&outcome.retry, Some(&out.join("retry.jsonl")))?;
    let details = json!({ "trusted": outcome.trusted, "retry": outcome.retry.len(), "written": outcome.kept.len() });
    RunReport::new("sft clean", &cfg, vec![outcome.report], details).emit(report)
}

fn contam_cmd(a: ContamArgs, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = cfg;
    if let Some(t) = a.threshold {
        cfg.contam.threshold = t;
    }
    let cfg = cfg.finalize()?;
    let unseen = read_inputs(&a.unseen)?;
    let mut sets = Vec::new();
    for (name, pat) in &a.eval {
        sets.push((name.clone(), read_inputs(std::slice::from_ref(pat))?));
    }
    let lm_model = load_lm(&a.scorer).ok();
    let file_scorer;
    let ngram;
    let scorer: &dyn LmScorer = match &lm_model {
        Some(m) => {
            ngram = NgramScorer::new(m);
            &ngram
        }
        None => {
            file_scorer = NllFileScorer::load(&a.scorer)?;
            &file_scorer
        }
    };
    let r = contam::measure(scorer, &unseen, &sets)?;
    let verdict = contam::interpret(&r, cfg.contam.threshold)?;
    let n_eval: usize = sets.iter().map(|(_, d)| d.len()).sum();
    let stages = vec![passthrough("contam", unseen.len() + n_eval)];
    let details = json!({ "report": r, "verdict": verdict });
    match report {
        Some(p) => {
            print!("{}", contam::render_table(&r, &verdict));
            RunReport::new("contam", &cfg, stages, details).emit(Some(p))
        }
        None => {
            eprint!("{}", contam::render_table(&r, &verdict));
            RunReport::new("contam", &cfg, stages, details).emit(None)
        }
    }
}

fn pipeline(a: PipelineArgs, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = cfg;
    if !a.eval.is_empty() {
        cfg.pipeline.eval = a.eval.clone();
    }
    if a.lm.is_some() {
        cfg.pipeline.lm = a.lm.clone();
    }
    let cfg = cfg.finalize()?;
    let lm = cfg.pipeline.lm.as_deref().map(load_lm).transpose()?;
    let docs = read_inputs(&a.input)?;

    let mut stages = Vec::new();
    let (docs, r) = normalize_stage(docs, &cfg)?;
    stages.push(r);
    let (docs, rejected, r) = filter_stage(docs, &cfg, lm.as_ref())?;
    info!("filter kept {} of {}", r.docs_out, r.docs_in);
    stages.push(r);
    let (mut docs, _, _, r) = dedup_stage(docs, &cfg)?;
    info!("dedup kept {} of {}", r.docs_out, r.docs_in);
    stages.push(r);
    let mut details = BTreeMap::new();
    if !cfg.pipeline.eval.is_empty() {
        let (kept, d, r) = decontam_stage(docs, &cfg, &cfg.pipeline.eval)?;
        docs = kept;
        details.insert("decontam", d);
        stages.push(r);
    }
    let shards = write_docs(&docs, &a.out, "part", cfg.docs_per_shard)?;
    if let Some(dir) = &a.rejects {
        write_rejects(&rejected, dir)?;
    }
    details.insert("shards", json!(shards));
    RunReport::new("pipeline", &cfg, stages, serde_json::to_value(details)?).emit(report)
}

fn synth_cmd(a: SynthArgs, cfg: RunConfig, report: Option<&Path>) -> Result<(), CliError> {
    fs::create_dir_all(&a.out)?;
    let seed = cfg.seed;
    let mut written = BTreeMap::new();
    let mut put = |name: &str, docs: &[Document]| -> Result<(), CliError> {
        write_jsonl(docs, Some(&a.out.join(format!("{name}.jsonl"))))?;
        written.insert(name.to_string(), docs.len());
        Ok(())
    };
    match a.kind {
        SynthKind::Mini => put("corpus", &synth::mini_corpus(seed, a.n))?,
        SynthKind::NearDup => {
            let (docs, pairs) = synth::near_dup_corpus(seed, a.n, a.n / 10, 0.02);
            put("corpus", &docs)?;
            let rows: Vec<Value> = pairs
                .iter()
                .map(|(o, c)| json!({ "original": o, "copy": c }))
                .collect();
            write_jsonl(&rows, Some(&a.out.join("pairs.jsonl")))?;
        }
        SynthKind::Sft => {
            let pairs = synth::sft_pairs(seed, a.n);
            write_jsonl(&pairs, Some(&a.out.join("pairs.jsonl")))?;
            written.insert("pairs".into(), pairs.len());
        }
        SynthKind::Contam => {
            let fx = synth::contam_fixture(seed);
            put("train", &fx.train)?;
            put("unseen", &fx.unseen)?;
            put("eval", &fx.eval)?;
        }
        SynthKind::Tokenizer => put("corpus", &synth::tokenizer_corpus(seed, a.n))?,
    }
    RunReport::new("synth", &cfg, vec![], json!({ "files": written })).emit(report)
}
