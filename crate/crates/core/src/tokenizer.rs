//! Byte-level BPE: training, encoding, decoding and compression ratio.
//!
//! Token ids: `0..256` are raw bytes, then the special tokens, then one id per
//! merge in training order. Every token has a distinct byte string.
//!
//! Training first promotes the most frequent characters to single tokens
//! (enough of them to cover `coverage` of the character mass), then merges
//! greedily by overlapping pair count. Ties go to the lexicographically
//! smallest `(left bytes, right bytes)`. A pair whose concatenation already
//! exists as a token is never merged. Training stops at the target size or
//! when the best pair occurs fewer than `min_pair_count` times.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

pub const BYTE_TOKENS: usize = 256;
pub const DEFAULT_COVERAGE: f64 = 0.9999;
pub const DEFAULT_MIN_PAIR_COUNT: u64 = 2;
const VOCAB_MAGIC: &str = "corpusforge-bpe";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary of {target} cannot hold {needed} tokens")]
    VocabTooSmall { target: usize, needed: usize },
    #[error("coverage must be in (0, 1], got {0}")]
    BadCoverage(f64),
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("vocab file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeConfig {
    pub target_vocab: usize,
    pub coverage: f64,
    pub specials: Vec<String>,
    pub min_pair_count: u64,
    /// Split text before each whitespace run and never merge across pieces.
    pub presplit: bool,
}

impl Default for BpeConfig {
    fn default() -> Self {
        Self {
            target_vocab: 8192,
            coverage: DEFAULT_COVERAGE,
            specials: Vec::new(),
            min_pair_count: DEFAULT_MIN_PAIR_COUNT,
            presplit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    specials: Vec<String>,
    coverage: f64,
    presplit: bool,
    promotions: usize,
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

impl BpeVocab {
    /// Builds a vocabulary from an explicit merge list, validating that every
    /// merge refers to existing tokens and creates a new byte string.
    pub fn from_merges(
        merges: Vec<(u32, u32)>,
        specials: Vec<String>,
        coverage: f64,
        presplit: bool,
        promotions: usize,
    ) -> Result<Self, TokenizerError> {
        let mut v = Self::base(specials, coverage, presplit);
        v.promotions = promotions.min(merges.len());
        let mut seen: HashSet<Vec<u8>> = v.tokens.iter().skip(BYTE_TOKENS).cloned().collect();
        seen.extend((0..=255u8).map(|b| vec![b]));
        for (i, &(l, r)) in merges.iter().enumerate() {
            let n = v.tokens.len() as u32;
            if l >= n || r >= n || v.is_special(l) || v.is_special(r) {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    msg: format!("merge ({l}, {r}) refers to an unavailable token"),
                });
            }
            let bytes = v.concat(l, r);
            if !seen.insert(bytes) {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    msg: "merge duplicates an existing token".into(),
                });
            }
            v.push_merge(l, r);
        }
        Ok(v)
    }

    fn base(specials: Vec<String>, coverage: f64, presplit: bool) -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend(specials.iter().map(|s| s.as_bytes().to_vec()));
        Self {
            merges: Vec::new(),
            specials,
            coverage,
            presplit,
            promotions: 0,
            tokens,
            ranks: HashMap::new(),
        }
    }

    fn concat(&self, l: u32, r: u32) -> Vec<u8> {
        let mut b = self.tokens[l as usize].clone();
        b.extend_from_slice(&self.tokens[r as usize]);
        b
    }

    fn push_merge(&mut self, l: u32, r: u32) -> u32 {
        let id = self.tokens.len() as u32;
        self.tokens.push(self.concat(l, r));
        self.ranks.insert((l, r), self.merges.len() as u32);
        self.merges.push((l, r));
        id
    }

    fn is_special(&self, id: u32) -> bool {
        (BYTE_TOKENS..BYTE_TOKENS + self.specials.len()).contains(&(id as usize))
    }

    fn merge_id(&self, rank: u32) -> u32 {
        (BYTE_TOKENS + self.specials.len()) as u32 + rank
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Merges as `(left bytes, right bytes)`.
    pub fn merge_bytes(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.tokens[l as usize].clone(), self.tokens[r as usize].clone()))
            .collect()
    }

    /// Number of leading merges that exist to make covered characters atomic.
    pub fn promotions(&self) -> usize {
        self.promotions
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn special_id(&self, s: &str) -> Option<u32> {
        self.specials
            .iter()
            .position(|x| x == s)
            .map(|i| (BYTE_TOKENS + i) as u32)
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn presplit(&self) -> bool {
        self.presplit
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Keeps the first `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        let mut v = Self::base(self.specials.clone(), self.coverage, self.presplit);
        v.promotions = self.promotions.min(n);
        for &(l, r) in self.merges.iter().take(n) {
            v.push_merge(l, r);
        }
        v
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 2 + 1);
        if self.presplit {
            for piece in presplit(text) {
                self.encode_bytes_into(piece.as_bytes(), &mut out);
            }
        } else {
            self.encode_bytes_into(text.as_bytes(), &mut out);
        }
        out
    }

    /// Applies merges in rank order over a linked list of symbols. Popping
    /// `(rank, position)` from a min-heap reproduces applying each merge in
    /// turn, left to right and without overlap.
    fn encode_bytes_into(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let n = bytes.len();
        if n == 0 {
            return;
        }
        let mut sym: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
        let mut alive = vec![true; n];
        let mut heap: BinaryHeap<Reverse<(u32, usize)>> = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&r) = self.ranks.get(&(sym[i], sym[i + 1])) {
                heap.push(Reverse((r, i)));
            }
        }
        while let Some(Reverse((rank, i))) = heap.pop() {
            if !alive[i] || next[i] >= n {
                continue;
            }
            let j = next[i];
            let (l, r) = self.merges[rank as usize];
            if sym[i] != l || sym[j] != r {
                continue;
            }
            sym[i] = self.merge_id(rank);
            alive[j] = false;
            next[i] = next[j];
            if next[j] < n {
                prev[next[j]] = i;
            }
            if prev[i] < n {
                if let Some(&r) = self.ranks.get(&(sym[prev[i]], sym[i])) {
                    heap.push(Reverse((r, prev[i])));
                }
            }
            if next[i] < n {
                if let Some(&r) = self.ranks.get(&(sym[i], sym[next[i]])) {
                    heap.push(Reverse((r, i)));
                }
            }
        }
        let mut i = 0;
        while i < n {
            out.push(sym[i]);
            i = next[i];
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| TokenizerError::InvalidUtf8)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_MAGIC} {VOCAB_VERSION}");
        let _ = writeln!(s, "size {}", self.size());
        let _ = writeln!(s, "coverage {}", self.coverage);
        let _ = writeln!(s, "presplit {}", u8::from(self.presplit));
        let _ = writeln!(s, "promotions {}", self.promotions);
        s.push_str("specials");
        for sp in &self.specials {
            let _ = write!(s, " {}", hex(sp.as_bytes()));
        }
        s.push('\n');
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (l, r) in self.merge_bytes() {
            let _ = writeln!(s, "{} {}", hex(&l), hex(&r));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut field = |key: &str| -> Result<(usize, String), TokenizerError> {
            let (no, line) = lines.next().ok_or(TokenizerError::Format {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            let rest = line
                .strip_prefix(key)
                .filter(|r| key.is_empty() || r.is_empty() || r.starts_with(' '))
                .ok_or_else(|| TokenizerError::Format {
                    line: no,
                    msg: format!("expected `{key}`"),
                })?;
            Ok((no, rest.trim().to_string()))
        };
        let bad = |line: usize, msg: &str| TokenizerError::Format {
            line,
            msg: msg.to_string(),
        };
        let (no, version) = field(VOCAB_MAGIC)?;
        if version != VOCAB_VERSION.to_string() {
            return Err(bad(no, "unsupported version"));
        }
        let (size_line, size) = field("size")?;
        let size: usize = size.parse().map_err(|_| bad(size_line, "bad size"))?;
        let (no, coverage) = field("coverage")?;
        let coverage: f64 = coverage.parse().map_err(|_| bad(no, "bad coverage"))?;
        let (no, presplit) = field("presplit")?;
        let presplit = match presplit.as_str() {
            "0" => false,
            "1" => true,
            _ => return Err(bad(no, "bad presplit flag")),
        };
        let (no, promotions) = field("promotions")?;
        let promotions: usize = promotions.parse().map_err(|_| bad(no, "bad promotions"))?;
        let (no, specials) = field("specials")?;
        let specials = specials
            .split_whitespace()
            .map(|h| {
                unhex(h)
                    .and_then(|b| String::from_utf8(b).ok())
                    .ok_or_else(|| bad(no, "bad special token"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (no, count) = field("merges")?;
        let count: usize = count.parse().map_err(|_| bad(no, "bad merge count"))?;
        let mut by_bytes: HashMap<Vec<u8>, u32> =
            (0..=255u8).map(|b| (vec![b], b as u32)).collect();
        let mut by_id: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        by_id.extend(specials.iter().map(|s| s.as_bytes().to_vec()));
        let mut merges = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, line) = field("")?;
            let mut parts = line.split(' ');
            let mut side = || {
                parts
                    .next()
                    .and_then(unhex)
                    .and_then(|b| by_bytes.get(&b).copied())
                    .ok_or_else(|| bad(no, "merge refers to an unknown token"))
            };
            let (l, r) = (side()?, side()?);
            merges.push((l, r));
            let mut bytes = by_id[l as usize].clone();
            bytes.extend_from_slice(&by_id[r as usize]);
            by_bytes.insert(bytes.clone(), by_id.len() as u32);
            by_id.push(bytes);
        }
        let v = Self::from_merges(merges, specials, coverage, presplit, promotions)?;
        if v.size() != size {
            return Err(bad(size_line, "size does not match merges and specials"));
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn hex(b: &[u8]) -> String {
    b.iter().fold(String::with_capacity(b.len() * 2), |mut s, x| {
        let _ = write!(s, "{x:02x}");
        s
    })
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Splits before every whitespace run that follows non-whitespace, so
/// `"a  b c"` becomes `["a", "  b", " c"]`. Concatenation restores the input.
pub fn presplit(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            pieces.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

// ---------------------------------------------------------------- training

/// Characters to make atomic: by descending frequency then code point, the
/// shortest prefix whose mass reaches `coverage`. Single-byte characters are
/// already tokens and are omitted from the result but count toward coverage.
pub fn covered_chars<'a, I>(texts: I, coverage: f64) -> Vec<char>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freq: BTreeMap<char, u64> = BTreeMap::new();
    let mut total = 0u64;
    for t in texts {
        for c in t.chars() {
            *freq.entry(c).or_insert(0) += 1;
            total += 1;
        }
    }
    let mut chars: Vec<(char, u64)> = freq.into_iter().collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let need = coverage * total as f64;
    let mut acc = 0u64;
    let mut out = Vec::new();
    for (c, n) in chars {
        if acc as f64 >= need {
            break;
        }
        acc += n;
        if c.len_utf8() > 1 {
            out.push(c);
        }
    }
    out
}

#[derive(Clone, PartialEq, Eq)]
struct Candidate {
    count: u64,
    key: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NIL: u32 = u32::MAX;

/// All training sequences flattened into one doubly linked token list.
/// `loc[pair]` holds left-node positions where the pair occurred at some
/// point; entries go stale after merges and are revalidated on use.
struct Trainer {
    vocab: BpeVocab,
    tok: Vec<u32>,
    prev: Vec<u32>,
    next: Vec<u32>,
    weight: Vec<u64>,
    counts: HashMap<(u32, u32), u64>,
    location: HashMap<(u32, u32), Vec<u32>>,
    existing: HashSet<Vec<u8>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn new(vocab: BpeVocab, words: Vec<(Vec<u32>, u64)>) -> Self {
        let existing = vocab.tokens.iter().cloned().collect();
        let total: usize = words.iter().map(|(w, _)| w.len()).sum();
        let mut t = Self {
            vocab,
            tok: Vec::with_capacity(total),
            prev: Vec::with_capacity(total),
            next: Vec::with_capacity(total),
            weight: Vec::with_capacity(total),
            counts: HashMap::new(),
            location: HashMap::new(),
            existing,
            heap: BinaryHeap::new(),
        };
        for (seq, n) in words {
            let base = t.tok.len() as u32;
            for (k, &id) in seq.iter().enumerate() {
                let i = base + k as u32;
                t.tok.push(id);
                t.weight.push(n);
                t.prev.push(if k == 0 { NIL } else { i - 1 });
                t.next.push(if k + 1 == seq.len() { NIL } else { i + 1 });
                if k > 0 {
                    let pair = (seq[k - 1], id);
                    *t.counts.entry(pair).or_insert(0) += n;
                    t.location.entry(pair).or_default().push(i - 1);
                }
            }
        }
        let pairs: Vec<(u32, u32)> = t.counts.keys().copied().collect();
        for p in pairs {
            t.push_candidate(p);
        }
        t
    }

    fn push_candidate(&mut self, pair: (u32, u32)) {
        let count = self.counts.get(&pair).copied().unwrap_or(0);
        if count == 0 {
            return;
        }
        let key = (
            self.vocab.tokens[pair.0 as usize].clone(),
            self.vocab.tokens[pair.1 as usize].clone(),
        );
        self.heap.push(Candidate {
            count,
            key: Reverse(key),
            pair,
        });
    }

    fn best(&mut self, min_count: u64) -> Option<(u32, u32)> {
        while let Some(c) = self.heap.pop() {
            if self.counts.get(&c.pair).copied().unwrap_or(0) != c.count {
                continue;
            }
            if c.count < min_count {
                return None;
            }
            let mut bytes = c.key.0 .0.clone();
            bytes.extend_from_slice(&c.key.0 .1);
            if self.existing.contains(&bytes) {
                continue;
            }
            return Some(c.pair);
        }
        None
    }

    fn shift(&mut self, pair: (u32, u32), delta: i64, touched: &mut HashSet<(u32, u32)>) {
        let c = self.counts.entry(pair).or_insert(0);
        *c = c.checked_add_signed(delta).expect("pair count underflow");
        touched.insert(pair);
    }

    fn apply(&mut self, pair: (u32, u32)) -> u32 {
        let id = self.vocab.push_merge(pair.0, pair.1);
        self.existing.insert(self.vocab.tokens[id as usize].clone());
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        let mut positions = self.location.remove(&pair).unwrap_or_default();
        positions.sort_unstable();
        positions.dedup();
        // Ascending positions give the left-to-right, non-overlapping rewrite.
        for i in positions {
            let j = self.next[i as usize];
            if self.tok[i as usize] != pair.0 || j == NIL || self.tok[j as usize] != pair.1 {
                continue;
            }
            let (i, j) = (i as usize, j as usize);
            let w = self.weight[i] as i64;
            let (p, n) = (self.prev[i], self.next[j]);
            if p != NIL {
                let left = self.tok[p as usize];
                self.shift((left, pair.0), -w, &mut touched);
                self.shift((left, id), w, &mut touched);
                self.location.entry((left, id)).or_default().push(p);
            }
            if n != NIL {
                let right = self.tok[n as usize];
                self.shift((pair.1, right), -w, &mut touched);
                self.shift((id, right), w, &mut touched);
                self.location.entry((id, right)).or_default().push(i as u32);
                self.prev[n as usize] = i as u32;
            }
            self.tok[i] = id;
            self.next[i] = n;
            self.tok[j] = NIL;
        }
        self.counts.remove(&pair);
        for q in touched {
            if q != pair {
                if self.counts.get(&q) == Some(&0) {
                    self.counts.remove(&q);
                } else {
                    self.push_candidate(q);
                }
            }
        }
        id
    }
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
pub fn merge_seq(seq: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Byte-prefix merges that make each covered character a single token,
/// reusing tokens that already exist.
fn promotion_merges(vocab: &mut BpeVocab, chars: &[char]) -> Result<(), TokenizerError> {
    let mut by_bytes: HashMap<Vec<u8>, u32> = vocab
        .tokens
        .iter()
        .enumerate()
        .take(BYTE_TOKENS)
        .map(|(i, b)| (b.clone(), i as u32))
        .collect();
    for c in chars {
        let mut buf = [0u8; 4];
        let bytes = c.encode_utf8(&mut buf).as_bytes();
        let mut cur = bytes[0] as u32;
        for k in 2..=bytes.len() {
            let prefix = &bytes[..k];
            cur = match by_bytes.get(prefix) {
                Some(&id) => id,
                None => {
                    let id = vocab.push_merge(cur, bytes[k - 1] as u32);
                    by_bytes.insert(prefix.to_vec(), id);
                    id
                }
            };
        }
    }
    vocab.promotions = vocab.merges.len();
    Ok(())
}

pub fn bpe_train<'a, I>(docs: I, target_vocab: usize, coverage: f64) -> Result<BpeVocab, TokenizerError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let cfg = BpeConfig {
        target_vocab,
        coverage,
        ..BpeConfig::default()
    };
    bpe_train_with(docs, &cfg)
}

pub fn bpe_train_with<'a, I>(docs: I, cfg: &BpeConfig) -> Result<BpeVocab, TokenizerError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let texts: Vec<&str> = docs.into_iter().map(|d| d.text.as_str()).collect();
    train_texts(&texts, cfg)
}

pub fn train_texts(texts: &[&str], cfg: &BpeConfig) -> Result<BpeVocab, TokenizerError> {
    if !(cfg.coverage > 0.0 && cfg.coverage <= 1.0) {
        return Err(TokenizerError::BadCoverage(cfg.coverage));
    }
    if texts.iter().all(|t| t.is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let base = BYTE_TOKENS + cfg.specials.len();
    if cfg.target_vocab < base {
        return Err(TokenizerError::VocabTooSmall {
            target: cfg.target_vocab,
            needed: base,
        });
    }
    let mut vocab = BpeVocab::base(cfg.specials.clone(), cfg.coverage, cfg.presplit);
    let chars = covered_chars(texts.iter().copied(), cfg.coverage);
    promotion_merges(&mut vocab, &chars)?;
    if vocab.size() > cfg.target_vocab {
        return Err(TokenizerError::VocabTooSmall {
            target: cfg.target_vocab,
            needed: vocab.size(),
        });
    }

    // Training sequences start from the promoted encoding.
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for t in texts {
        if cfg.presplit {
            for p in presplit(t) {
                *word_counts.entry(p).or_insert(0) += 1;
            }
        } else if !t.is_empty() {
            *word_counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut keys: Vec<(&str, u64)> = word_counts.into_iter().collect();
    keys.sort_unstable();
    let words = keys
        .into_iter()
        .map(|(w, n)| (vocab.encode(w), n))
        .collect();

    let mut trainer = Trainer::new(vocab, words);
    while trainer.vocab.size() < cfg.target_vocab {
        match trainer.best(cfg.min_pair_count.max(1)) {
            Some(pair) => {
                trainer.apply(pair);
            }
            None => break,
        }
    }
    Ok(trainer.vocab)
}

// ---------------------------------------------------------------- compression ratio

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrReport {
    pub lang: String,
    pub char_count: u64,
    pub token_count: u64,
    pub cr: f64,
}

/// `""` and `"*"` match every language; otherwise exact match or a
/// `-`/`_`-separated prefix (`zh` matches `zh-Hans`).
pub fn lang_matches(lang: &str, filter: &str) -> bool {
    if filter.is_empty() || filter == "*" || lang == filter {
        return true;
    }
    lang.strip_prefix(filter)
        .is_some_and(|rest| rest.starts_with('-') || rest.starts_with('_'))
}

/// Tokens per Unicode character over documents whose language matches.
pub fn compression_ratio<'a, I>(
    vocab: &BpeVocab,
    docs: I,
    lang_filter: &str,
) -> Result<CrReport, TokenizerError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let (mut chars, mut tokens) = (0u64, 0u64);
    for d in docs.into_iter().filter(|d| lang_matches(&d.lang, lang_filter)) {
        chars += d.text.chars().count() as u64;
        tokens += vocab.encode(&d.text).len() as u64;
    }
    if chars == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    Ok(CrReport {
        lang: lang_filter.to_string(),
        char_count: chars,
        token_count: tokens,
        cr: tokens as f64 / chars as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(target: usize) -> BpeConfig {
        BpeConfig {
            target_vocab: target,
            coverage: 1.0,
            ..BpeConfig::default()
        }
    }

    fn tok(v: &BpeVocab, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| String::from_utf8(v.token_bytes(i).unwrap().to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn aaab_single_merge() {
        let v = train_texts(&["aaab"], &cfg(257)).unwrap();
        assert_eq!(v.merge_bytes(), vec![(b"a".to_vec(), b"a".to_vec())]);
        assert_eq!(tok(&v, &v.encode("aaab")), ["aa", "a", "b"]);
    }

    #[test]
    fn abab_two_merges() {
        let v = train_texts(&["abab abab"], &cfg(258)).unwrap();
        assert_eq!(
            v.merge_bytes(),
            vec![
                (b"a".to_vec(), b"b".to_vec()),
                (b"ab".to_vec(), b"ab".to_vec())
            ]
        );
    }

    #[test]
    fn zero_merges_is_bytes_plus_specials() {
        let c = BpeConfig {
            specials: vec!["<|eot|>".into()],
            ..cfg(257)
        };
        let v = train_texts(&["hello"], &c).unwrap();
        assert_eq!(v.size(), 257);
        assert!(v.merges().is_empty());
        assert_eq!(v.encode("hi!"), vec![b'h' as u32, b'i' as u32, b'!' as u32]);
        assert_eq!(v.special_id("<|eot|>"), Some(256));
    }

    #[test]
    fn errors() {
        assert!(matches!(train_texts(&[""], &cfg(300)), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_texts(&["a"], &cfg(100)), Err(TokenizerError::VocabTooSmall { .. })));
        // 3-byte chars need 2 promotion merges each, one shared prefix here
        let r = train_texts(&["中丰"], &cfg(257));
        assert!(matches!(r, Err(TokenizerError::VocabTooSmall { needed: 259, .. })));
        assert!(matches!(
            train_texts(&["a"], &BpeConfig { coverage: 0.0, ..cfg(300) }),
            Err(TokenizerError::BadCoverage(_))
        ));
    }

    #[test]
    fn covered_chars_are_single_tokens() {
        let text = "中文中文中文 日本 한국어 x";
        let v = train_texts(&[text], &cfg(400)).unwrap();
        for c in text.chars() {
            assert_eq!(v.encode(&c.to_string()).len(), 1, "{c}");
        }
    }

    #[test]
    fn partial_coverage_leaves_rare_chars_as_bytes() {
        let text = format!("{}{}", "中".repeat(99), "丰");
        let c = BpeConfig {
            coverage: 0.99,
            min_pair_count: u64::MAX,
            ..cfg(400)
        };
        let v = train_texts(&[text.as_str()], &c).unwrap();
        assert_eq!(v.promotions(), 2);
        assert_eq!(v.encode("中").len(), 1);
        assert_eq!(v.encode("丰").len(), 2); // shares the E4 B8 prefix
    }

    #[test]
    fn cr_examples() {
        let v = train_texts(&["aaaa aaaa aaaa"], &cfg(258)).unwrap();
        let d = Document::new("1", "aaaa", "web", "en");
        let r = compression_ratio(&v, [&d], "en").unwrap();
        assert_eq!((r.token_count, r.char_count, r.cr), (1, 4, 0.25));
        let bytes = train_texts(&["x"], &cfg(256)).unwrap();
        assert_eq!(compression_ratio(&bytes, [&d], "").unwrap().cr, 1.0);
        assert!(matches!(
            compression_ratio(&bytes, [&d], "zh"),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn lang_prefix_matching() {
        assert!(lang_matches("zh-Hans", "zh"));
        assert!(lang_matches("zh_cn", "zh"));
        assert!(!lang_matches("zhx", "zh"));
        assert!(lang_matches("ko", "*"));
    }

    #[test]
    fn presplit_pieces() {
        assert_eq!(presplit("a  b c"), ["a", "  b", " c"]);
        assert_eq!(presplit("  lead"), ["  lead"]);
        assert_eq!(presplit(""), Vec::<&str>::new());
    }

    #[test]
    fn vocab_text_round_trip() {
        let c = BpeConfig {
            specials: vec!["<pad>".into()],
            presplit: true,
            ..cfg(300)
        };
        let v = train_texts(&["the cat sat on the mat, 猫が座った"], &c).unwrap();
        let text = v.to_text();
        let back = BpeVocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        let broken = text.replacen(&format!("size {}", v.size()), "size 9999", 1);
        assert!(BpeVocab::from_text(&broken).is_err());
    }

    #[test]
    fn truncation_is_a_prefix() {
        let texts = ["the theme of the thesis", "other mothers bathe"];
        let big = train_texts(&texts, &cfg(280)).unwrap();
        let small = train_texts(&texts, &cfg(265)).unwrap();
        assert_eq!(big.truncated(small.merges().len()), small);
    }
}
