//! Document model and line-delimited JSON shard I/O.
//!
//! A shard is a UTF-8 file holding one JSON object per line:
//!
//! ```text
//! {"id":"doc-1","text":"...","source":"web","lang":"en","meta":{"url":"..."}}
//! ```
//!
//! Shards are named `<name>-NNNNN.jsonl` with a zero-padded five digit index.
//! Reading is streaming and surfaces malformed lines as per-line errors so a
//! caller can decide whether to skip or abort.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {0}: missing or non-string field `{1}`")]
    MissingField(usize, &'static str),
    #[error("line {0}: invalid UTF-8")]
    InvalidUnicode(usize),
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid document: {reason}")]
    InvalidDocument { line: usize, reason: String },
    #[error("bad input pattern `{0}`: {1}")]
    Pattern(String, String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One text record flowing through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    pub lang: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
        lang: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: source.into(),
            lang: lang.into(),
            meta: BTreeMap::new(),
        }
    }

    /// Checks the record-level invariants. Empty text is allowed.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.source.is_empty() {
            return Err("empty source".into());
        }
        if self.lang.is_empty() {
            return Err("empty lang".into());
        }
        if self.text.contains('\0') {
            return Err("NUL byte in text".into());
        }
        Ok(())
    }
}

/// Summary of a written shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub path: PathBuf,
    pub count: u64,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

/// Per-stage document accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stage_name: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub docs_dropped_by_reason: BTreeMap<String, u64>,
}

impl PipelineReport {
    pub fn new(stage_name: impl Into<String>) -> Self {
        Self {
            stage_name: stage_name.into(),
            ..Self::default()
        }
    }

    pub fn record_kept(&mut self) {
        self.docs_in += 1;
        self.docs_out += 1;
    }

    pub fn record_dropped(&mut self, reason: impl Into<String>) {
        self.docs_in += 1;
        *self.docs_dropped_by_reason.entry(reason.into()).or_insert(0) += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.docs_dropped_by_reason.values().sum()
    }

    /// `docs_in == docs_out + Σ drops`.
    pub fn reconciles(&self) -> bool {
        self.docs_in == self.docs_out + self.dropped()
    }

    /// Adds another report's counts (same stage, different shard or worker).
    pub fn merge(&mut self, other: &PipelineReport) {
        self.docs_in += other.docs_in;
        self.docs_out += other.docs_out;
        for (reason, n) in &other.docs_dropped_by_reason {
            *self.docs_dropped_by_reason.entry(reason.clone()).or_insert(0) += n;
        }
    }
}

/// Streaming reader over a JSONL shard.
///
/// Yields one item per non-blank line; line numbers are 1-based.
pub struct ShardReader<R> {
    inner: R,
    line_no: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> ShardReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line_no: 0,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> Iterator for ShardReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = match std::str::from_utf8(&self.buf) {
                Ok(s) => s.trim_end_matches(['\n', '\r']),
                Err(_) => return Some(Err(CorpusError::InvalidUnicode(self.line_no))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(line, self.line_no));
        }
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
        line: line_no,
        message: "not a JSON object".into(),
    })?;
    let field = |name: &'static str| -> Result<String, CorpusError> {
        obj.get(name)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or(CorpusError::MissingField(line_no, name))
    };
    let mut doc = Document {
        id: field("id")?,
        text: field("text")?,
        source: field("source")?,
        lang: field("lang")?,
        meta: BTreeMap::new(),
    };
    match obj.get("meta") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                doc.meta.insert(k.clone(), v);
            }
        }
        Some(_) => {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "`meta` must be an object".into(),
            })
        }
    }
    doc.validate().map_err(|reason| CorpusError::InvalidDocument {
        line: line_no,
        reason,
    })?;
    Ok(doc)
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<ShardReader<BufReader<File>>, CorpusError> {
    Ok(ShardReader::new(BufReader::new(File::open(path)?)))
}

/// Reads a whole shard, failing on the first bad line.
pub fn read_shard_strict(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    read_shard(path)?.collect()
}

/// Serializes one document as a single JSONL line (without the terminator).
pub fn to_line(doc: &Document) -> String {
    serde_json::to_string(doc).expect("documents always serialize")
}

/// Writes documents to `path`, returning exact count and text byte totals.
pub fn write_shard<'a, I>(docs: I, path: impl AsRef<Path>) -> Result<Shard, CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let path = path.as_ref();
    let mut w = ShardWriter::create(path)?;
    for doc in docs {
        w.write(doc)?;
    }
    w.finish()
}

/// Incremental shard writer; exclusive owner of its file.
pub struct ShardWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: u64,
    bytes: u64,
}

impl ShardWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        Ok(Self {
            out: BufWriter::new(File::create(&path)?),
            path,
            count: 0,
            bytes: 0,
        })
    }

    pub fn write(&mut self, doc: &Document) -> Result<(), CorpusError> {
        self.write_value(doc, doc.text.len())
    }

    /// Writes any serializable record; `text_bytes` feeds the byte tally.
    pub fn write_value<T: Serialize>(
        &mut self,
        record: &T,
        text_bytes: usize,
    ) -> Result<(), CorpusError> {
        serde_json::to_writer(&mut self.out, record).map_err(io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.count += 1;
        self.bytes += text_bytes as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<Shard, CorpusError> {
        self.out.flush()?;
        Ok(Shard {
            path: self.path,
            count: self.count,
            bytes: self.bytes,
            token_count: None,
        })
    }
}

/// `<dir>/<name>-NNNNN.jsonl`
pub fn shard_path(dir: impl AsRef<Path>, name: &str, index: usize) -> PathBuf {
    dir.as_ref().join(format!("{name}-{index:05}.jsonl"))
}

/// Splits a document stream into numbered shards of at most `docs_per_shard`.
///
/// Always produces at least one (possibly empty) shard so downstream globbing
/// sees the stage ran.
pub fn write_shards<'a, I>(
    docs: I,
    dir: impl AsRef<Path>,
    name: &str,
    docs_per_shard: usize,
) -> Result<Vec<Shard>, CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let dir = dir.as_ref();
    let per = docs_per_shard.max(1);
    let mut shards = Vec::new();
    let mut writer = ShardWriter::create(shard_path(dir, name, 0))?;
    let mut in_current = 0usize;
    for doc in docs {
        if in_current == per {
            shards.push(writer.finish()?);
            writer = ShardWriter::create(shard_path(dir, name, shards.len()))?;
            in_current = 0;
        }
        writer.write(doc)?;
        in_current += 1;
    }
    shards.push(writer.finish()?);
    Ok(shards)
}

/// Expands glob patterns into a sorted, de-duplicated file list.
pub fn expand_inputs<S: AsRef<str>>(patterns: &[S]) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for pat in patterns {
        let pat = pat.as_ref();
        let paths =
            glob::glob(pat).map_err(|e| CorpusError::Pattern(pat.to_string(), e.to_string()))?;
        for p in paths {
            let p = p.map_err(|e| CorpusError::Io(e.into()))?;
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Reads every document from the given files in order, stopping at the first error.
pub fn read_all(paths: &[PathBuf]) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for p in paths {
        for d in read_shard(p)? {
            docs.push(d?);
        }
    }
    Ok(docs)
}
