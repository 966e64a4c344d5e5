//! Near-duplicate detection and evaluation-set decontamination.
//!
//! Each document gets a [`Signature`]: a 64-bit SimHash over weighted shingle
//! features and a unit-length embedding of its keyphrases. A document is a
//! duplicate of an indexed one when their SimHashes are within Hamming radius
//! `r`, or, failing that, when their embeddings have cosine `>= t`.
//!
//! Hamming-ball lookups at `r <= 3` go through four 16-bit band tables: two
//! 64-bit words within distance 3 agree exactly on at least one of the four
//! bands (pigeonhole). Larger radii fall back to a linear scan.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, PipelineReport};
use crate::text::{cjk_fraction, fnv1a64};
use crate::Scalar;

pub const DEFAULT_RADIUS: u32 = 3;
pub const DEFAULT_COS_THRESHOLD: f64 = 0.95;
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_KEYPHRASES: usize = 512;

const BANDS: usize = 4;
const BAND_BITS: u32 = 16;
const INDEX_FORMAT: &str = "corpusforge-sigindex";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("index corrupt: {0}")]
    IndexCorrupt(String),
    #[error("embedding dimension must be a power of two >= 16, got {0}")]
    BadDimension(usize),
    #[error("embedding dimension mismatch: index {index}, signature {got}")]
    DimensionMismatch { index: usize, got: usize },
    #[error("no external embedding for document `{0}`")]
    MissingEmbedding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------- features

/// Weighted shingle multiset, ordered by feature string.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureBag {
    pub weights: BTreeMap<String, u32>,
}

impl FeatureBag {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.weights.iter().map(|(k, &w)| (k.as_str(), w))
    }

    /// The `k` heaviest features, ties broken by feature string.
    pub fn top_k(&self, k: usize) -> Vec<String> {
        let mut v: Vec<(&String, u32)> = self.weights.iter().map(|(f, &w)| (f, w)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().take(k).map(|(f, _)| f.clone()).collect()
    }
}

fn shingle_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word 2-shingles, or character 3-shingles when most characters are CJK.
/// Texts too short for one shingle contribute their whole content as a
/// single feature.
pub fn shingles(text: &str) -> FeatureBag {
    let mut bag = FeatureBag::default();
    let mut add = |f: String| *bag.weights.entry(f).or_insert(0) += 1;
    if cjk_fraction(text) >= 0.5 {
        let chars: Vec<char> = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        if chars.len() >= 3 {
            for w in chars.windows(3) {
                add(w.iter().collect());
            }
        } else if !chars.is_empty() {
            add(chars.iter().collect());
        }
    } else {
        let words = shingle_words(text);
        if words.len() >= 2 {
            for w in words.windows(2) {
                add(format!("{} {}", w[0], w[1]));
            }
        } else if let Some(w) = words.first() {
            add(w.clone());
        }
    }
    bag
}

/// `(keyphrases, features)` where keyphrases are the top-`k` features.
pub fn extract_features(text: &str, k: usize) -> (Vec<String>, FeatureBag) {
    let bag = shingles(text);
    (bag.top_k(k), bag)
}

// ---------------------------------------------------------------- simhash

/// Signed bit vote over FNV-1a 64 feature hashes. Ties resolve to 0.
pub fn simhash64<'a, I>(features: I) -> u64
where
    I: IntoIterator<Item = (&'a str, u32)>,
{
    let mut votes = [0i64; 64];
    for (f, w) in features {
        let h = fnv1a64(f.as_bytes());
        let w = w as i64;
        for (bit, v) in votes.iter_mut().enumerate() {
            if (h >> bit) & 1 == 1 {
                *v += w;
            } else {
                *v -= w;
            }
        }
    }
    votes
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .fold(0u64, |acc, (bit, _)| acc | (1u64 << bit))
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

// ---------------------------------------------------------------- embedding

pub fn check_dim(dim: usize) -> Result<(), DedupError> {
    if dim >= 16 && dim.is_power_of_two() {
        Ok(())
    } else {
        Err(DedupError::BadDimension(dim))
    }
}

/// Signed feature hashing of keyphrases into `dim` buckets, L2-normalized.
/// The bucket comes from the low bits of FNV-1a, the sign from bit 63.
/// Empty input gives the zero vector.
pub fn embed<F: Scalar>(keyphrases: &[String], dim: usize) -> Vec<F> {
    debug_assert!(dim.is_power_of_two());
    let mut v = vec![F::zero(); dim];
    for kp in keyphrases {
        let h = fnv1a64(kp.as_bytes());
        let bucket = (h as usize) & (dim - 1);
        if h >> 63 == 1 {
            v[bucket] = v[bucket] - F::one();
        } else {
            v[bucket] = v[bucket] + F::one();
        }
    }
    normalize_l2(&mut v);
    v
}

pub fn normalize_l2<F: Scalar>(v: &mut [F]) {
    let norm = v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    if norm > F::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> F {
    let (mut dot, mut na, mut nb) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == F::zero() || nb == F::zero() {
        F::zero()
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Maps a document to a unit vector. Implement this to plug in an external
/// embedding model.
pub trait Embedder<F: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_document(&self, doc_id: &str, keyphrases: &[String]) -> Result<Vec<F>, DedupError>;
}

#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self, DedupError> {
        check_dim(dim)?;
        Ok(Self { dim })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl<F: Scalar> Embedder<F> for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_document(&self, _doc_id: &str, keyphrases: &[String]) -> Result<Vec<F>, DedupError> {
        Ok(embed(keyphrases, self.dim))
    }
}

/// Embeddings read from a JSONL file of `{"id": ..., "embedding": [...]}`.
/// Vectors are L2-normalized on load.
#[derive(Debug, Clone)]
pub struct FileEmbedder<F> {
    dim: usize,
    vectors: HashMap<String, Vec<F>>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    id: String,
    embedding: Vec<f64>,
}

impl<F: Scalar> FileEmbedder<F> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DedupError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| {
                DedupError::IndexCorrupt(format!("embedding file line {}: {e}", i + 1))
            })?;
            let d = *dim.get_or_insert(row.embedding.len());
            if d != row.embedding.len() {
                return Err(DedupError::DimensionMismatch {
                    index: d,
                    got: row.embedding.len(),
                });
            }
            let mut v: Vec<F> = row
                .embedding
                .iter()
                .map(|&x| F::from(x).unwrap_or_else(F::zero))
                .collect();
            normalize_l2(&mut v);
            vectors.insert(row.id, v);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }
}

impl<F: Scalar> Embedder<F> for FileEmbedder<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_document(&self, doc_id: &str, _keyphrases: &[String]) -> Result<Vec<F>, DedupError> {
        self.vectors
            .get(doc_id)
            .cloned()
            .ok_or_else(|| DedupError::MissingEmbedding(doc_id.to_string()))
    }
}

// ---------------------------------------------------------------- signature & index

#[derive(Debug, Clone, PartialEq)]
pub struct Signature<F> {
    pub doc_id: String,
    pub simhash: u64,
    pub keyphrases: Vec<String>,
    pub embedding: Vec<F>,
}

#[derive(Serialize, Deserialize)]
struct SignatureRow {
    doc_id: String,
    simhash: String,
    keyphrases: Vec<String>,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
    bands: usize,
    count: usize,
}

fn band_key(hash: u64, band: usize) -> u16 {
    (hash >> (band as u32 * BAND_BITS)) as u16
}

/// Signature store with banded SimHash tables and a flat embedding matrix.
#[derive(Debug, Clone)]
pub struct SigIndex<F> {
    dim: usize,
    entries: Vec<Signature<F>>,
    tags: Vec<Option<String>>,
    bands: Vec<HashMap<u16, Vec<u32>>>,
    matrix: Vec<F>,
}

impl<F: Scalar> SigIndex<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            tags: Vec::new(),
            bands: vec![HashMap::new(); BANDS],
            matrix: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Signature<F> {
        &self.entries[idx]
    }

    pub fn tag(&self, idx: usize) -> Option<&str> {
        self.tags[idx].as_deref()
    }

    pub fn insert(&mut self, sig: Signature<F>, tag: Option<String>) -> Result<usize, DedupError> {
        if sig.embedding.len() != self.dim {
            return Err(DedupError::DimensionMismatch {
                index: self.dim,
                got: sig.embedding.len(),
            });
        }
        let idx = self.entries.len();
        for (b, table) in self.bands.iter_mut().enumerate() {
            table
                .entry(band_key(sig.simhash, b))
                .or_default()
                .push(idx as u32);
        }
        self.matrix.extend_from_slice(&sig.embedding);
        self.entries.push(sig);
        self.tags.push(tag);
        Ok(idx)
    }

    /// Indices of entries within Hamming distance `radius`, ascending.
    pub fn hamming_ball(&self, hash: u64, radius: u32) -> Vec<usize> {
        if radius as usize >= BANDS {
            return (0..self.entries.len())
                .filter(|&i| hamming(self.entries[i].simhash, hash) <= radius)
                .collect();
        }
        let mut out: Vec<usize> = Vec::new();
        for (b, table) in self.bands.iter().enumerate() {
            if let Some(ids) = table.get(&band_key(hash, b)) {
                out.extend(
                    ids.iter()
                        .map(|&i| i as usize)
                        .filter(|&i| hamming(self.entries[i].simhash, hash) <= radius),
                );
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// First entry (insertion order) with cosine `>= threshold`, else the
    /// best cosine seen.
    pub fn first_cosine_match(&self, query: &[F], threshold: F) -> CosineProbe<F> {
        let nz: Vec<(usize, F)> = query
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != F::zero())
            .map(|(i, &x)| (i, x))
            .collect();
        let mut best = F::neg_infinity();
        if nz.is_empty() {
            return CosineProbe::Miss { best };
        }
        for (idx, row) in self.matrix.chunks_exact(self.dim).enumerate() {
            // stored rows are unit or zero; query is unit
            let dot = nz.iter().fold(F::zero(), |acc, &(j, x)| acc + x * row[j]);
            if dot >= threshold {
                return CosineProbe::Hit { idx, cos: dot };
            }
            if dot > best {
                best = dot;
            }
        }
        CosineProbe::Miss { best }
    }

    /// Writes `index.json`, `entries.jsonl` and `band-<k>.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DedupError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            dim: self.dim,
            bands: BANDS,
            count: self.entries.len(),
        };
        fs::write(
            dir.join("index.json"),
            serde_json::to_string_pretty(&header).expect("header serializes"),
        )?;
        let mut w = BufWriter::new(fs::File::create(dir.join("entries.jsonl"))?);
        for (sig, tag) in self.entries.iter().zip(&self.tags) {
            let row = SignatureRow {
                doc_id: sig.doc_id.clone(),
                simhash: format!("{:016x}", sig.simhash),
                keyphrases: sig.keyphrases.clone(),
                embedding: sig
                    .embedding
                    .iter()
                    .map(|x| x.to_f64().unwrap_or(0.0))
                    .collect(),
                tag: tag.clone(),
            };
            serde_json::to_writer(&mut w, &row).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        for (b, table) in self.bands.iter().enumerate() {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("band-{b}.txt")))?);
            let mut keys: Vec<&u16> = table.keys().collect();
            keys.sort();
            for k in keys {
                write!(w, "{k:04x}")?;
                for i in &table[k] {
                    write!(w, " {i}")?;
                }
                writeln!(w)?;
            }
            w.flush()?;
        }
        Ok(())
    }

    /// Loads a saved index and cross-checks the band files against the entries.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DedupError> {
        let dir = dir.as_ref();
        let corrupt = |m: String| DedupError::IndexCorrupt(m);
        let header: IndexHeader = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)
            .map_err(|e| corrupt(format!("index.json: {e}")))?;
        if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
            return Err(corrupt(format!(
                "unsupported index {} v{}",
                header.format, header.version
            )));
        }
        if header.bands != BANDS {
            return Err(corrupt(format!("expected {BANDS} bands, got {}", header.bands)));
        }
        let mut index = SigIndex::new(header.dim);
        let reader = BufReader::new(fs::File::open(dir.join("entries.jsonl"))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: SignatureRow = serde_json::from_str(&line)
                .map_err(|e| corrupt(format!("entries.jsonl line {}: {e}", i + 1)))?;
            let simhash = u64::from_str_radix(&row.simhash, 16)
                .map_err(|e| corrupt(format!("entries.jsonl line {}: {e}", i + 1)))?;
            let sig = Signature {
                doc_id: row.doc_id,
                simhash,
                keyphrases: row.keyphrases,
                embedding: row
                    .embedding
                    .iter()
                    .map(|&x| F::from(x).unwrap_or_else(F::zero))
                    .collect(),
            };
            index
                .insert(sig, row.tag)
                .map_err(|e| corrupt(e.to_string()))?;
        }
        if index.len() != header.count {
            return Err(corrupt(format!(
                "header says {} entries, found {}",
                header.count,
                index.len()
            )));
        }
        for b in 0..BANDS {
            let text = fs::read_to_string(dir.join(format!("band-{b}.txt")))?;
            let mut stored: HashMap<u16, Vec<u32>> = HashMap::new();
            for line in text.lines().filter(|l| !l.is_empty()) {
                let mut parts = line.split(' ');
                let key = parts
                    .next()
                    .and_then(|k| u16::from_str_radix(k, 16).ok())
                    .ok_or_else(|| corrupt(format!("band-{b}.txt: bad key in `{line}`")))?;
                let ids = parts
                    .map(str::parse)
                    .collect::<Result<Vec<u32>, _>>()
                    .map_err(|e| corrupt(format!("band-{b}.txt: {e}")))?;
                stored.insert(key, ids);
            }
            if stored != index.bands[b] {
                return Err(corrupt(format!("band-{b}.txt disagrees with entries")));
            }
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CosineProbe<F> {
    Hit { idx: usize, cos: F },
    Miss { best: F },
}

// ---------------------------------------------------------------- decisions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Simhash,
    Embedding,
    None,
}

/// Outcome for one document. `distance` is Hamming bits for the SimHash
/// channel, `1 - cosine` for the embedding channel, and `1 - best cosine`
/// against the index for non-duplicates (1 when nothing was comparable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDecision {
    pub doc_id: String,
    pub duplicate_of: Option<String>,
    pub channel: Channel,
    pub distance: f64,
}

impl DedupDecision {
    pub fn is_duplicate(&self) -> bool {
        self.channel != Channel::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub radius: u32,
    pub cos_threshold: f64,
    pub dim: usize,
    pub keyphrases: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            cos_threshold: DEFAULT_COS_THRESHOLD,
            dim: DEFAULT_DIM,
            keyphrases: DEFAULT_KEYPHRASES,
        }
    }
}

/// Streaming deduplicator. First occurrence survives; survivors are added to
/// the index as they are seen.
pub struct Deduper<F: Scalar> {
    cfg: DedupConfig,
    index: SigIndex<F>,
    embedder: Box<dyn Embedder<F>>,
}

impl<F: Scalar> Deduper<F> {
    pub fn new(cfg: DedupConfig) -> Result<Self, DedupError> {
        let embedder = HashingEmbedder::new(cfg.dim)?;
        Ok(Self {
            index: SigIndex::new(cfg.dim),
            cfg,
            embedder: Box::new(embedder),
        })
    }

    /// Starts from an existing index (e.g. pre-loaded evaluation signatures).
    pub fn with_index(cfg: DedupConfig, index: SigIndex<F>) -> Result<Self, DedupError> {
        if index.dim() != cfg.dim {
            return Err(DedupError::DimensionMismatch {
                index: index.dim(),
                got: cfg.dim,
            });
        }
        let mut d = Self::new(cfg)?;
        d.index = index;
        Ok(d)
    }

    pub fn with_embedder(mut self, embedder: Box<dyn Embedder<F>>) -> Result<Self, DedupError> {
        if embedder.dim() != self.cfg.dim {
            return Err(DedupError::DimensionMismatch {
                index: self.cfg.dim,
                got: embedder.dim(),
            });
        }
        self.embedder = embedder;
        Ok(self)
    }

    pub fn config(&self) -> &DedupConfig {
        &self.cfg
    }

    pub fn index(&self) -> &SigIndex<F> {
        &self.index
    }

    pub fn into_index(self) -> SigIndex<F> {
        self.index
    }

    pub fn signature(&self, doc: &Document) -> Result<Signature<F>, DedupError> {
        signature_with(doc, self.cfg.keyphrases, self.embedder.as_ref())
    }

    /// Looks `sig` up without inserting it. Returns the matched index entry.
    pub fn query(&self, sig: &Signature<F>) -> (DedupDecision, Option<usize>) {
        if let Some(&idx) = self
            .index
            .hamming_ball(sig.simhash, self.cfg.radius)
            .first()
        {
            let d = hamming(sig.simhash, self.index.get(idx).simhash);
            return (
                DedupDecision {
                    doc_id: sig.doc_id.clone(),
                    duplicate_of: Some(self.index.get(idx).doc_id.clone()),
                    channel: Channel::Simhash,
                    distance: d as f64,
                },
                Some(idx),
            );
        }
        let t = F::from(self.cfg.cos_threshold).unwrap_or_else(F::one);
        match self.index.first_cosine_match(&sig.embedding, t) {
            CosineProbe::Hit { idx, cos } => (
                DedupDecision {
                    doc_id: sig.doc_id.clone(),
                    duplicate_of: Some(self.index.get(idx).doc_id.clone()),
                    channel: Channel::Embedding,
                    distance: 1.0 - cos.to_f64().unwrap_or(0.0),
                },
                Some(idx),
            ),
            CosineProbe::Miss { best } => (
                DedupDecision {
                    doc_id: sig.doc_id.clone(),
                    duplicate_of: None,
                    channel: Channel::None,
                    distance: if best.is_finite() {
                        1.0 - best.to_f64().unwrap_or(0.0)
                    } else {
                        1.0
                    },
                },
                None,
            ),
        }
    }

    /// Checks `doc` against the index and inserts it when it is new.
    pub fn process(&mut self, doc: &Document) -> Result<DedupDecision, DedupError> {
        let sig = self.signature(doc)?;
        let (decision, _) = self.query(&sig);
        if !decision.is_duplicate() {
            self.index.insert(sig, None)?;
        }
        Ok(decision)
    }
}

pub fn signature_with<F: Scalar>(
    doc: &Document,
    keyphrases: usize,
    embedder: &dyn Embedder<F>,
) -> Result<Signature<F>, DedupError> {
    let (kp, bag) = extract_features(&doc.text, keyphrases);
    let embedding = embedder.embed_document(&doc.id, &kp)?;
    Ok(Signature {
        doc_id: doc.id.clone(),
        simhash: simhash64(bag.iter()),
        keyphrases: kp,
        embedding,
    })
}

/// Runs `docs` through a deduplicator seeded with `index`.
pub fn dedup_pass<'a, F: Scalar, I>(
    docs: I,
    index: SigIndex<F>,
    radius: u32,
    cos_threshold: f64,
) -> Result<(Vec<DedupDecision>, SigIndex<F>), DedupError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let cfg = DedupConfig {
        radius,
        cos_threshold,
        dim: index.dim(),
        ..DedupConfig::default()
    };
    let mut d = Deduper::with_index(cfg, index)?;
    let decisions = docs
        .into_iter()
        .map(|doc| d.process(doc))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((decisions, d.into_index()))
}

/// Deduplicates a document list, returning survivors and a stage report.
pub fn dedup_documents<F: Scalar>(
    docs: Vec<Document>,
    deduper: &mut Deduper<F>,
) -> Result<(Vec<Document>, Vec<DedupDecision>, PipelineReport), DedupError> {
    let mut report = PipelineReport::new("dedup");
    let mut kept = Vec::new();
    let mut decisions = Vec::with_capacity(docs.len());
    for doc in docs {
        let dec = deduper.process(&doc)?;
        match dec.channel {
            Channel::None => {
                report.record_kept();
                kept.push(doc);
            }
            Channel::Simhash => report.record_dropped("duplicate:simhash"),
            Channel::Embedding => report.record_dropped("duplicate:embedding"),
        }
        decisions.push(dec);
    }
    Ok((kept, decisions, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecontamReport {
    pub docs_in: u64,
    pub docs_out: u64,
    pub removed_by_set: BTreeMap<String, u64>,
    pub removed_by_channel: BTreeMap<String, u64>,
}

impl DecontamReport {
    pub fn to_pipeline_report(&self) -> PipelineReport {
        PipelineReport {
            stage_name: "decontaminate".into(),
            docs_in: self.docs_in,
            docs_out: self.docs_out,
            docs_dropped_by_reason: self
                .removed_by_set
                .iter()
                .map(|(k, &v)| (format!("eval:{k}"), v))
                .collect(),
        }
    }
}

/// Evaluation signatures, ready to screen training documents.
pub struct EvalScreen<F: Scalar> {
    deduper: Deduper<F>,
}

impl<F: Scalar> EvalScreen<F> {
    /// Indexes every evaluation document (no deduplication among them).
    pub fn build<S: AsRef<str>>(
        cfg: DedupConfig,
        eval_sets: &[(S, Vec<Document>)],
    ) -> Result<Self, DedupError> {
        let mut deduper = Deduper::new(cfg)?;
        for (name, docs) in eval_sets {
            for d in docs {
                let sig = deduper.signature(d)?;
                deduper.index.insert(sig, Some(name.as_ref().to_string()))?;
            }
        }
        Ok(Self { deduper })
    }

    pub fn from_index(cfg: DedupConfig, index: SigIndex<F>) -> Result<Self, DedupError> {
        Ok(Self {
            deduper: Deduper::with_index(cfg, index)?,
        })
    }

    pub fn index(&self) -> &SigIndex<F> {
        self.deduper.index()
    }

    /// The eval set a training document collides with, if any.
    pub fn screen(&self, doc: &Document) -> Result<(DedupDecision, Option<String>), DedupError> {
        let sig = self.deduper.signature(doc)?;
        let (dec, idx) = self.deduper.query(&sig);
        let set = idx.map(|i| {
            self.deduper
                .index()
                .tag(i)
                .unwrap_or("unnamed")
                .to_string()
        });
        Ok((dec, set))
    }

    pub fn filter(&self, train: Vec<Document>) -> Result<(Vec<Document>, DecontamReport), DedupError> {
        let mut report = DecontamReport::default();
        let mut kept = Vec::new();
        for doc in train {
            report.docs_in += 1;
            let (dec, set) = self.screen(&doc)?;
            match set {
                None => {
                    report.docs_out += 1;
                    kept.push(doc);
                }
                Some(set) => {
                    *report.removed_by_set.entry(set).or_insert(0) += 1;
                    let ch = match dec.channel {
                        Channel::Simhash => "simhash",
                        _ => "embedding",
                    };
                    *report.removed_by_channel.entry(ch.into()).or_insert(0) += 1;
                }
            }
        }
        Ok((kept, report))
    }
}

/// Drops training documents matching any evaluation document.
pub fn decontaminate<S: AsRef<str>>(
    train: Vec<Document>,
    eval_sets: &[(S, Vec<Document>)],
    radius: u32,
    cos_threshold: f64,
) -> Result<(Vec<Document>, DecontamReport), DedupError> {
    let cfg = DedupConfig {
        radius,
        cos_threshold,
        ..DedupConfig::default()
    };
    EvalScreen::<f64>::build(cfg, eval_sets)?.filter(train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, "web", "en")
    }

    #[test]
    fn word_shingles() {
        let (_, bag) = extract_features("a b c", 8);
        let expected: BTreeMap<String, u32> =
            [("a b".to_string(), 1), ("b c".to_string(), 1)].into();
        assert_eq!(bag.weights, expected);
        assert!(shingles("").is_empty());
        assert_eq!(shingles("x y x y").weights["x y"], 2);
    }

    #[test]
    fn cjk_character_shingles() {
        let bag = shingles("你好世界");
        let keys: Vec<&String> = bag.weights.keys().collect();
        assert_eq!(keys, ["你好世", "好世界"]);
    }

    #[test]
    fn keyphrases_by_weight_then_lexicographic() {
        // x y:2, then y x / y z / z w tied at 1
        let (kp, _) = extract_features("x y x y z w", 2);
        assert_eq!(kp, ["x y", "y x"]);
    }

    #[test]
    fn simhash_single_feature_is_its_hash() {
        assert_eq!(simhash64([("hello world", 3)]), fnv1a64(b"hello world"));
        assert_eq!(simhash64(std::iter::empty()), 0);
    }

    #[test]
    fn embedding_is_unit() {
        let v: Vec<f64> = embed(&["a b".into(), "c d".into(), "e f".into()], 64);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        let z: Vec<f64> = embed(&[], 64);
        assert!(z.iter().all(|&x| x == 0.0));
        let v32: Vec<f32> = embed(&["a b".into()], 16);
        assert_eq!(v32.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn disjoint_buckets_are_orthogonal() {
        let dim = 256;
        let bucket = |s: &str| (fnv1a64(s.as_bytes()) as usize) & (dim - 1);
        let a = "alpha beta".to_string();
        let b = ["gamma delta", "epsilon zeta", "eta theta"]
            .iter()
            .map(|s| s.to_string())
            .find(|s| bucket(s) != bucket(&a))
            .unwrap();
        let ea: Vec<f64> = embed(std::slice::from_ref(&a), dim);
        let eb: Vec<f64> = embed(std::slice::from_ref(&b), dim);
        assert_eq!(cosine(&ea, &eb), 0.0);
        assert_eq!(cosine(&ea, &ea), 1.0);
    }

    #[test]
    fn bad_dimension() {
        assert!(HashingEmbedder::new(100).is_err());
        assert!(HashingEmbedder::new(8).is_err());
    }

    #[test]
    fn identical_docs_flagged_by_simhash() {
        let mut d = Deduper::<f64>::new(DedupConfig::default()).unwrap();
        let a = d.process(&doc("1", "the quick brown fox jumps")).unwrap();
        let b = d.process(&doc("2", "the quick brown fox jumps")).unwrap();
        assert_eq!(a.channel, Channel::None);
        assert_eq!(b.channel, Channel::Simhash);
        assert_eq!(b.duplicate_of.as_deref(), Some("1"));
        assert_eq!(b.distance, 0.0);
    }

    #[test]
    fn empty_eval_sets_pass_everything() {
        let train = vec![doc("1", "a b c"), doc("2", "d e f")];
        let sets: Vec<(&str, Vec<Document>)> = vec![];
        let (out, rep) = decontaminate(train.clone(), &sets, 3, 0.95).unwrap();
        assert_eq!(out, train);
        assert_eq!(rep.docs_out, 2);
    }

    #[test]
    fn verbatim_eval_text_removed() {
        let q = "which planet in the solar system has the largest number of moons";
        let train = vec![doc("t1", q), doc("t2", "a recipe for bread with flour and water")];
        let sets = vec![("quiz", vec![doc("q1", q)])];
        let (out, rep) = decontaminate(train, &sets, 3, 0.95).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "t2");
        assert_eq!(rep.removed_by_set["quiz"], 1);
    }

    #[test]
    fn index_round_trip_and_corruption() {
        let mut d = Deduper::<f64>::new(DedupConfig::default()).unwrap();
        for (i, t) in ["one two three", "four five six", "seven eight nine ten"]
            .iter()
            .enumerate()
        {
            d.process(&doc(&i.to_string(), t)).unwrap();
        }
        let index = d.into_index();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let back = SigIndex::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for i in 0..3 {
            assert_eq!(back.get(i), index.get(i));
        }
        std::fs::write(dir.path().join("band-2.txt"), "ffff 0\n").unwrap();
        assert!(matches!(
            SigIndex::<f64>::load(dir.path()),
            Err(DedupError::IndexCorrupt(_))
        ));
    }

    #[test]
    fn external_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let mut rows = String::new();
        let mut v = vec![0.0; 16];
        v[0] = 3.0;
        rows += &serde_json::json!({"id": "a", "embedding": v}).to_string();
        rows += "\n";
        v[1] = 0.1;
        rows += &serde_json::json!({"id": "b", "embedding": v}).to_string();
        rows += "\n";
        std::fs::write(&path, rows).unwrap();
        let emb = FileEmbedder::<f64>::load(&path).unwrap();
        let cfg = DedupConfig {
            dim: 16,
            ..DedupConfig::default()
        };
        let mut d = Deduper::new(cfg).unwrap().with_embedder(Box::new(emb)).unwrap();
        // unrelated text, but the external vectors are nearly parallel
        d.process(&doc("a", "completely different words here")).unwrap();
        let dec = d.process(&doc("b", "nothing alike at all in this one")).unwrap();
        assert_eq!(dec.channel, Channel::Embedding);
        assert!(matches!(
            d.process(&doc("c", "x")),
            Err(DedupError::MissingEmbedding(_))
        ));
    }
}
