//! Word-level n-gram language model with interpolated absolute discounting.
//!
//! For a context `h` of order `k` with total count `c(h)` and `N1+(h·)`
//! distinct continuations,
//!
//! ```text
//! p_k(w | h) = max(c(h,w) - D, 0) / c(h) + D * N1+(h·) / c(h) * p_{k-1}(w | h')
//! p_0(w)     = 1 / |V|
//! ```
//!
//! where `h'` drops the oldest token and `V` is the predictable vocabulary
//! (every training word, `<unk>` and `</s>`). Unseen contexts fall straight
//! through to the lower order. `<s>` pads contexts but is never predicted.
//!
//! Unknown words: `<unk>` never occurs in the count tables. At the unigram
//! order it receives a pseudo-count equal to the number of word types seen
//! exactly once in training (Good-Turing style singleton mass). With no
//! singletons it still gets its share of the uniform floor.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
pub use crate::text::tokenize_words;

pub const UNK: &str = "<unk>";
pub const END: &str = "</s>";
pub const BOS: &str = "<s>";
pub const UNK_ID: u32 = 0;
pub const END_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
const FIRST_WORD_ID: u32 = 3;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const MAX_ORDER: usize = 5;

const MAGIC: &str = "corpusforge-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("text has no tokens")]
    EmptyText,
    #[error("order must be in 1..={MAX_ORDER}, got {0}")]
    BadOrder(usize),
    #[error("discount must be in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-text likelihood summary in natural-log units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub token_count: u64,
    pub total_nll: f64,
    pub mean_nll: f64,
    pub perplexity: f64,
}

impl ScoredText {
    pub fn from_total(total_nll: f64, token_count: u64) -> Self {
        let mean_nll = total_nll / token_count as f64;
        Self {
            token_count,
            total_nll,
            mean_nll,
            perplexity: mean_nll.exp(),
        }
    }
}

/// Mergeable n-gram counts. Each counter carries its own interner, so counters
/// built on different shards can be combined in any order.
#[derive(Debug, Clone)]
pub struct NgramCounter {
    order: usize,
    interner: HashMap<String, u32>,
    words: Vec<String>,
    // counts[k-1]: k-gram (ids, context first) -> count
    counts: Vec<HashMap<Vec<u32>, u64>>,
}

impl NgramCounter {
    pub fn new(order: usize) -> Result<Self, LmError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(LmError::BadOrder(order));
        }
        let mut c = Self {
            order,
            interner: HashMap::new(),
            words: Vec::new(),
            counts: vec![HashMap::new(); order],
        };
        for w in [UNK, END, BOS] {
            c.intern(w);
        }
        Ok(c)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.interner.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.interner.insert(w.to_string(), id);
        id
    }

    /// Counts every k-gram (k = 1..=order) of one document, padded with
    /// `order - 1` begin markers and terminated by one end marker.
    pub fn add_text(&mut self, text: &str) {
        let tokens = tokenize_words(text);
        let mut seq: Vec<u32> = vec![BOS_ID; self.order - 1];
        for t in &tokens {
            let id = self.intern(t);
            seq.push(id);
        }
        seq.push(END_ID);
        let pad = self.order - 1;
        for pos in pad..seq.len() {
            for k in 1..=self.order {
                let gram = seq[pos + 1 - k..=pos].to_vec();
                *self.counts[k - 1].entry(gram).or_insert(0) += 1;
            }
        }
    }

    pub fn add_document(&mut self, doc: &Document) {
        self.add_text(&doc.text);
    }

    /// Adds `other`'s counts into `self`, remapping its word ids.
    pub fn merge(&mut self, other: &NgramCounter) -> Result<(), LmError> {
        if other.order != self.order {
            return Err(LmError::BadOrder(other.order));
        }
        let remap: Vec<u32> = other.words.iter().map(|w| self.intern(w)).collect();
        for (k, table) in other.counts.iter().enumerate() {
            for (gram, &n) in table {
                let g: Vec<u32> = gram.iter().map(|&id| remap[id as usize]).collect();
                *self.counts[k].entry(g).or_insert(0) += n;
            }
        }
        Ok(())
    }

    /// Freezes the counts into a model with a sorted, order-independent vocabulary.
    pub fn finish(self, discount: f64) -> Result<NgramLM, LmError> {
        if self.counts[0].is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut words: Vec<&String> = self.words[FIRST_WORD_ID as usize..].iter().collect();
        words.sort();
        let mut vocab: Vec<String> = vec![UNK.into(), END.into(), BOS.into()];
        vocab.extend(words.into_iter().cloned());
        let final_id: HashMap<&str, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32))
            .collect();
        let remap: Vec<u32> = self.words.iter().map(|w| final_id[w.as_str()]).collect();
        let counts = self
            .counts
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|(g, &n)| (g.iter().map(|&i| remap[i as usize]).collect(), n))
                    .collect()
            })
            .collect();
        NgramLM::from_parts(self.order, discount, vocab, counts)
    }
}

#[derive(Debug, Clone, Default)]
struct ContextStats {
    total: u64,
    next: HashMap<u32, u64>,
}

/// A trained, immutable n-gram model. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct NgramLM {
    order: usize,
    discount: f64,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<HashMap<Vec<u32>, u64>>,
    // contexts[k-1]: context of length k-1 -> continuation stats
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
    unk_pseudo_count: u64,
}

impl NgramLM {
    fn from_parts(
        order: usize,
        discount: f64,
        vocab: Vec<String>,
        counts: Vec<HashMap<Vec<u32>, u64>>,
    ) -> Result<Self, LmError> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(LmError::BadDiscount(discount));
        }
        let ids = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let unk_pseudo_count = counts[0]
            .iter()
            .filter(|(g, &n)| g[0] >= FIRST_WORD_ID && n == 1)
            .count() as u64;
        let mut contexts: Vec<HashMap<Vec<u32>, ContextStats>> = vec![HashMap::new(); order];
        for (k, table) in counts.iter().enumerate() {
            for (gram, &n) in table {
                let (ctx, w) = gram.split_at(gram.len() - 1);
                let st = contexts[k].entry(ctx.to_vec()).or_default();
                st.total += n;
                st.next.insert(w[0], n);
            }
        }
        if unk_pseudo_count > 0 {
            let st = contexts[0].entry(Vec::new()).or_default();
            st.total += unk_pseudo_count;
            st.next.insert(UNK_ID, unk_pseudo_count);
        }
        Ok(Self {
            order,
            discount,
            vocab,
            ids,
            counts,
            contexts,
            unk_pseudo_count,
        })
    }

    pub fn train<'a, I>(docs: I, order: usize) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        Self::train_with_discount(docs, order, DEFAULT_DISCOUNT)
    }

    pub fn train_with_discount<'a, I>(docs: I, order: usize, discount: f64) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut c = NgramCounter::new(order)?;
        let mut any_tokens = false;
        for d in docs {
            any_tokens |= !tokenize_words(&d.text).is_empty();
            c.add_document(d);
        }
        if !any_tokens {
            return Err(LmError::EmptyCorpus);
        }
        c.finish(discount)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Every id including the `<s>` pad.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    /// Ids that carry probability mass (all but `<s>`).
    pub fn predictable_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab.len() as u32).filter(|&i| i != BOS_ID)
    }

    pub fn predictable_size(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn unk_pseudo_count(&self) -> u64 {
        self.unk_pseudo_count
    }

    /// Raw count of an n-gram given as words (context first).
    pub fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        let Some(ids) = gram.iter().map(|w| self.id(w)).collect::<Option<Vec<_>>>() else {
            return 0;
        };
        self.counts[gram.len() - 1].get(&ids).copied().unwrap_or(0)
    }

    /// `p(word | context)` with `context` oldest-first; only the last
    /// `order - 1` ids are used. Returns 0 for `<s>`.
    pub fn prob(&self, context: &[u32], word: u32) -> f64 {
        if word == BOS_ID {
            return 0.0;
        }
        let keep = context.len().min(self.order - 1);
        self.prob_k(&context[context.len() - keep..], word)
    }

    fn prob_k(&self, ctx: &[u32], word: u32) -> f64 {
        let lower = if ctx.is_empty() {
            1.0 / self.predictable_size() as f64
        } else {
            self.prob_k(&ctx[1..], word)
        };
        match self.contexts[ctx.len()].get(ctx) {
            Some(st) if st.total > 0 => {
                let total = st.total as f64;
                let c = st.next.get(&word).copied().unwrap_or(0) as f64;
                let discounted = (c - self.discount).max(0.0) / total;
                let backoff = self.discount * st.next.len() as f64 / total;
                discounted + backoff * lower
            }
            _ => lower,
        }
    }

    pub fn word_prob(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.lookup(w)).collect();
        self.prob(&ctx, self.lookup(word))
    }

    fn lookup(&self, w: &str) -> u32 {
        match self.ids.get(w) {
            Some(&id) => id,
            None => UNK_ID,
        }
    }

    /// Mean per-token negative log-likelihood of `text`, counting the end token.
    pub fn score(&self, text: &str) -> Result<ScoredText, LmError> {
        let tokens = tokenize_words(text);
        if tokens.is_empty() {
            return Err(LmError::EmptyText);
        }
        let mut seq: Vec<u32> = vec![BOS_ID; self.order - 1];
        seq.extend(tokens.iter().map(|t| self.lookup(t)));
        seq.push(END_ID);
        let pad = self.order - 1;
        let mut total = 0.0;
        for pos in pad..seq.len() {
            total -= self.prob(&seq[pos - pad..pos], seq[pos]).ln();
        }
        Ok(ScoredText::from_total(total, (seq.len() - pad) as u64))
    }

    /// Writes the versioned JSON artifact.
    pub fn save<W: Write>(&self, w: W) -> Result<(), LmError> {
        let file = ModelFile {
            magic: MAGIC.into(),
            version: FORMAT_VERSION,
            order: self.order,
            discount: self.discount,
            vocab: self.vocab.clone(),
            counts: self
                .counts
                .iter()
                .map(|t| {
                    let mut rows: Vec<(Vec<u32>, u64)> =
                        t.iter().map(|(g, &n)| (g.clone(), n)).collect();
                    rows.sort();
                    rows
                })
                .collect(),
        };
        serde_json::to_writer(w, &file).map_err(|e| LmError::Format(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self, LmError> {
        let f: ModelFile =
            serde_json::from_reader(r).map_err(|e| LmError::Format(e.to_string()))?;
        if f.magic != MAGIC {
            return Err(LmError::Format(format!("bad magic `{}`", f.magic)));
        }
        if f.version != FORMAT_VERSION {
            return Err(LmError::Format(format!("unsupported version {}", f.version)));
        }
        if !(1..=MAX_ORDER).contains(&f.order) || f.counts.len() != f.order {
            return Err(LmError::Format("order/count table mismatch".into()));
        }
        if f.vocab.len() < FIRST_WORD_ID as usize
            || f.vocab[..FIRST_WORD_ID as usize] != [UNK, END, BOS]
        {
            return Err(LmError::Format("reserved tokens missing".into()));
        }
        let n = f.vocab.len() as u32;
        let mut counts = Vec::with_capacity(f.order);
        for (k, rows) in f.counts.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(rows.len());
            for (g, c) in rows {
                if g.len() != k + 1 || g.iter().any(|&i| i >= n) {
                    return Err(LmError::Format(format!("bad {}-gram row", k + 1)));
                }
                table.insert(g, c);
            }
            counts.push(table);
        }
        Self::from_parts(f.order, f.discount, f.vocab, counts)
    }

    /// Sorted count tables; identical for identical training data.
    pub fn count_tables(&self) -> Vec<BTreeMap<Vec<u32>, u64>> {
        self.counts
            .iter()
            .map(|t| t.iter().map(|(g, &n)| (g.clone(), n)).collect())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    order: usize,
    discount: f64,
    vocab: Vec<String>,
    counts: Vec<Vec<(Vec<u32>, u64)>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t, "web", "en"))
            .collect()
    }

    #[test]
    fn bigram_counts() {
        let lm = NgramLM::train(&docs(&["a b", "a b"]), 2).unwrap();
        assert_eq!(lm.count(&["a", "b"]), 2);
        assert_eq!(lm.count(&[BOS, "a"]), 2);
        assert_eq!(lm.count(&["b", END]), 2);
        assert_eq!(lm.count(&["a"]), 2);
    }

    #[test]
    fn unigram_vocab_has_reserved_tokens() {
        let lm = NgramLM::train(&docs(&["a"]), 1).unwrap();
        for w in ["a", UNK, END] {
            assert!(lm.id(w).is_some(), "{w}");
        }
        assert_eq!(lm.predictable_size(), 3);
    }

    #[test]
    fn distributions_sum_to_one() {
        let lm = NgramLM::train(&docs(&["a b c a b", "b c d", "a a a"]), 3).unwrap();
        let ids: Vec<u32> = lm.predictable_ids().collect();
        let mut contexts: Vec<Vec<u32>> = vec![vec![], vec![BOS_ID, BOS_ID]];
        for &x in &ids {
            for &y in &ids {
                contexts.push(vec![x, y]);
            }
            contexts.push(vec![BOS_ID, x]);
        }
        for ctx in contexts {
            let s: f64 = ids.iter().map(|&w| lm.prob(&ctx, w)).sum();
            assert!((s - 1.0).abs() < 1e-9, "{ctx:?}: {s}");
            assert!(ids.iter().all(|&w| lm.prob(&ctx, w) > 0.0));
        }
    }

    #[test]
    fn unigram_closed_form() {
        // counts: a=4, </s>=1, no singleton words -> unk pseudo-count 0
        // p(a)   = 3.25/5 + 0.75*2/5 * 1/3 = 0.75
        // p(</s>) = 0.25/5 + 0.1 = 0.15
        let lm = NgramLM::train(&docs(&["a a a a"]), 1).unwrap();
        let s = lm.score("a").unwrap();
        let expected = (-(0.75f64).ln() - (0.15f64).ln()) / 2.0;
        assert_eq!(s.token_count, 2);
        assert!((s.mean_nll - expected).abs() < 1e-12);
        assert!((lm.word_prob(&[], UNK) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn singleton_mass_goes_to_unk() {
        // a=2, b=1, c=1, </s>=1 ; unk pseudo=2 ; total=7 ; 5 types with mass
        let lm = NgramLM::train(&docs(&["a a b c"]), 1).unwrap();
        assert_eq!(lm.unk_pseudo_count(), 2);
        let v = lm.predictable_size() as f64;
        let expected = (2.0 - 0.75) / 7.0 + 0.75 * 5.0 / 7.0 / v;
        assert!((lm.word_prob(&[], "zzz") - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            NgramLM::train(&docs(&["", " "]), 2),
            Err(LmError::EmptyCorpus)
        ));
        let lm = NgramLM::train(&docs(&["a"]), 2).unwrap();
        assert!(matches!(lm.score("  "), Err(LmError::EmptyText)));
        assert!(matches!(NgramLM::train(&docs(&["a"]), 0), Err(LmError::BadOrder(0))));
        assert!(matches!(NgramLM::train(&docs(&["a"]), 6), Err(LmError::BadOrder(6))));
    }

    #[test]
    fn seen_text_beats_unseen() {
        let lm = NgramLM::train(&docs(&["the cat sat on the mat"]), 3).unwrap();
        let seen = lm.score("the cat sat on the mat").unwrap();
        let unseen = lm.score("qq ww ee rr tt yy").unwrap();
        assert!(seen.mean_nll < unseen.mean_nll);
    }

    #[test]
    fn shard_order_does_not_change_counts() {
        let a = docs(&["x y z", "y z w"]);
        let b = docs(&["z z x", "w"]);
        let mut c1 = NgramCounter::new(3).unwrap();
        a.iter().for_each(|d| c1.add_document(d));
        let mut c2 = NgramCounter::new(3).unwrap();
        b.iter().for_each(|d| c2.add_document(d));
        let mut left = c1.clone();
        left.merge(&c2).unwrap();
        let mut right = c2;
        right.merge(&c1).unwrap();
        let l = left.finish(0.75).unwrap();
        let r = right.finish(0.75).unwrap();
        assert_eq!(l.vocab(), r.vocab());
        assert_eq!(l.count_tables(), r.count_tables());
    }

    #[test]
    fn save_load_round_trip() {
        let lm = NgramLM::train(&docs(&["a b c", "c b a 你好"]), 3).unwrap();
        let mut buf = Vec::new();
        lm.save(&mut buf).unwrap();
        let back = NgramLM::load(&buf[..]).unwrap();
        assert_eq!(back.vocab(), lm.vocab());
        assert_eq!(back.count_tables(), lm.count_tables());
        let mut again = Vec::new();
        back.save(&mut again).unwrap();
        assert_eq!(buf, again);
        assert_eq!(
            back.score("a b 好").unwrap().total_nll.to_bits(),
            lm.score("a b 好").unwrap().total_nll.to_bits()
        );
    }

    #[test]
    fn rejects_foreign_artifacts() {
        assert!(NgramLM::load(&br#"{"magic":"x"}"#[..]).is_err());
    }
}
