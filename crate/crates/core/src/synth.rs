//! Deterministic synthetic corpora used by the bundled fixtures, tests and
//! the acceptance run. Everything here is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::schedule::{StagePlan, TokenEstimator};
use crate::sft_clean::SftPair;

const HANZI: &str = "的一是不了人我在有他这中大来上国个到说们为子和你地出道也时年得就那要下以生会自着去之过家学对可里后小么心多天而能好都然没日于起还发成事只作当想看文无开手十用主行方又如前所本见经头面公同三已老从动两长知民样现分将外但身些与高意进把法此实回二理美点月明其种声全工己话儿者向情部正名定女问力机给等几很业最间新什打便位因重被走电四第门相次东政海口使教西再平真听世气信北少关并内加化由却代军产入先山五太水万市眼体别处总才场师书比住员九笑性通目华报立马命张活难神数件安表原车白应路期叫死常提感金何更反合放做系计或司利受光王果亲界及今京务制解各任至清物台象记边共风战干接它许八特觉望直服毛林题建南度统色字请交爱让认算论百吃义科怎元社术结六功指思非流每青管夫连远资队跟带花快条院变联言权往展该领传近留红治决周保达办运武半候七必城父强步完革深区即求品士转量空甚众技轻程告江语英基派满式李息写呢识极令黄德收脸钱党倒未持音跑投";
const KANA: &str = "あいうえおかきくけこさしすせそたちつてとなにぬねのはひふへほまみむめもやゆよらりるれろわをんがぎぐげござじずぜぞだでどばびぶべぼアイウエオカキクケコサシスセソタチツテトナニヌネノハヒフヘホマミムメモヤユヨラリルレロワン";
const KANJI: &str = "日本人大年出中子生国上時行見月分後前間東今高手気地方学会者部事自社三思家長話合明場京水入";
const HANGUL: &str = "가나다라마바사아자차카타파하고노도로모보소오조초코토포호구누두루무부수우주추쿠투푸후기니디리미비시이지치키티피히개내대래매배새애재채케테페해는을를에의한서들과것지로그으면게했었요습니다있어서하여해요";

const EN_FUNCTION: &[&str] = &[
    "the", "of", "and", "to", "in", "a", "is", "that", "for", "it", "as", "was", "with", "on", "by",
    "at", "from", "this", "be", "or", "are", "an", "which", "but", "not", "have", "has", "they",
    "were", "their", "its", "one", "all", "more", "can", "when", "there", "been", "other", "into",
];
const CONSONANTS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "st", "tr", "ch", "sh", "pl", "br",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];

pub const SOURCES: &[&str] = &["web", "news", "book", "academic", "code"];
pub const LANGS: &[&str] = &["en", "zh", "ja", "ko"];

/// Phrases the bundled pipeline config flags as harmful.
pub const HARM_PHRASES: &[&str] = &["casino bonus jackpot", "buy counterfeit pills", "wire transfer scam"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Text generator over fixed per-language inventories. `cjk_pool` caps how
/// many distinct CJK characters each language draws from.
#[derive(Debug, Clone)]
pub struct TextGen {
    en_words: Vec<String>,
    hanzi: Vec<char>,
    kana: Vec<char>,
    kanji: Vec<char>,
    hangul: Vec<char>,
    zipf: Vec<f64>,
}

impl TextGen {
    pub fn new(vocab_seed: u64, en_vocab: usize, cjk_pool: usize) -> Self {
        let mut r = rng(vocab_seed);
        let mut words: Vec<String> = EN_FUNCTION.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
        while words.len() < en_vocab.max(EN_FUNCTION.len() + 1) {
            let syl = r.gen_range(1..=3);
            let w: String = (0..syl)
                .map(|_| format!("{}{}", CONSONANTS.choose(&mut r).unwrap(), VOWELS.choose(&mut r).unwrap()))
                .collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        // mild Zipf; cumulative weights
        let mut acc = 0.0;
        let zipf = (0..words.len())
            .map(|i| {
                acc += 1.0 / ((i + 2) as f64).powf(0.9);
                acc
            })
            .collect();
        let take = |s: &str| s.chars().take(cjk_pool).collect::<Vec<char>>();
        Self {
            en_words: words,
            hanzi: take(HANZI),
            kana: take(KANA),
            kanji: take(KANJI),
            hangul: take(HANGUL),
            zipf,
        }
    }

    /// Mid-size vocabulary with all CJK characters.
    pub fn standard() -> Self {
        Self::new(0x5eed, 4000, usize::MAX)
    }

    fn en_word<R: Rng>(&self, r: &mut R) -> &str {
        let total = *self.zipf.last().unwrap();
        let x = r.gen::<f64>() * total;
        let i = self.zipf.partition_point(|&c| c < x).min(self.en_words.len() - 1);
        &self.en_words[i]
    }

    pub fn sentence<R: Rng>(&self, r: &mut R, lang: &str) -> String {
        match lang {
            "zh" => {
                let n = r.gen_range(8..24);
                let mut s: String = (0..n).map(|_| *self.hanzi.choose(r).unwrap()).collect();
                s.push('。');
                s
            }
            "ja" => {
                let n = r.gen_range(10..28);
                let mut s: String = (0..n)
                    .map(|_| {
                        if r.gen_bool(0.25) {
                            *self.kanji.choose(r).unwrap()
                        } else {
                            *self.kana.choose(r).unwrap()
                        }
                    })
                    .collect();
                s.push('。');
                s
            }
            "ko" => {
                let n = r.gen_range(4..12);
                let words: Vec<String> = (0..n)
                    .map(|_| {
                        let k = r.gen_range(1..=4);
                        (0..k).map(|_| *self.hangul.choose(r).unwrap()).collect()
                    })
                    .collect();
                format!("{}.", words.join(" "))
            }
            _ => {
                let n = r.gen_range(6..18);
                let mut words: Vec<String> = (0..n).map(|_| self.en_word(r).to_string()).collect();
                if let Some(first) = words.first_mut() {
                    let mut c = first.chars();
                    *first = c.next().map(|h| h.to_uppercase().chain(c).collect()).unwrap_or_default();
                }
                format!("{}.", words.join(" "))
            }
        }
    }

    pub fn code_line<R: Rng>(&self, r: &mut R) -> String {
        let a = self.en_word(r);
        let b = self.en_word(r);
        match r.gen_range(0..4) {
            0 => format!("let {a}_{} = {b}({});", r.gen_range(0..99), r.gen_range(0..999)),
            1 => format!("if {a} > {} {{ return {b}; }}", r.gen_range(0..99)),
            2 => format!("fn {a}_{b}(x: u32) -> u32 {{ x + {} }}", r.gen_range(0..99)),
            _ => format!("// {a} {b} {}", self.en_word(r)),
        }
    }

    /// Paragraphs of roughly `units` words (or characters for zh/ja).
    pub fn document<R: Rng>(&self, r: &mut R, source: &str, lang: &str, units: usize) -> String {
        let mut paras = Vec::new();
        let mut produced = 0;
        while produced < units {
            let mut para = Vec::new();
            for _ in 0..r.gen_range(2..6) {
                let s = if source == "code" {
                    self.code_line(r)
                } else {
                    self.sentence(r, lang)
                };
                produced += unit_count(&s, lang);
                para.push(s);
                if produced >= units {
                    break;
                }
            }
            let sep = if source == "code" || lang == "zh" || lang == "ja" { "\n" } else { " " };
            paras.push(para.join(sep));
        }
        paras.join("\n\n")
    }
}

fn unit_count(s: &str, lang: &str) -> usize {
    match lang {
        "zh" | "ja" => s.chars().count(),
        _ => s.split_whitespace().count(),
    }
}

/// Applies `n` random token edits (replace, insert or delete) to
/// whitespace-separated text, or character edits for unspaced CJK text.
pub fn edit_tokens<R: Rng>(r: &mut R, gen: &TextGen, text: &str, lang: &str, n: usize) -> String {
    let spaced = !(lang == "zh" || lang == "ja");
    let mut toks: Vec<String> = if spaced {
        text.split(' ').map(str::to_string).collect()
    } else {
        text.chars().map(|c| c.to_string()).collect()
    };
    for _ in 0..n {
        if toks.len() < 2 {
            break;
        }
        let i = r.gen_range(0..toks.len());
        let fresh = if spaced {
            gen.en_word(r).to_string()
        } else {
            gen.hanzi.choose(r).unwrap().to_string()
        };
        match r.gen_range(0..3) {
            0 => toks[i] = fresh,
            1 => toks.insert(i, fresh),
            _ => {
                toks.remove(i);
            }
        }
    }
    toks.join(if spaced { " " } else { "" })
}

pub fn pick_lang<R: Rng>(r: &mut R) -> &'static str {
    match r.gen_range(0..100) {
        0..=44 => "en",
        45..=79 => "zh",
        80..=89 => "ja",
        _ => "ko",
    }
}

pub fn pick_source<R: Rng>(r: &mut R) -> &'static str {
    match r.gen_range(0..100) {
        0..=44 => "web",
        45..=69 => "news",
        70..=81 => "book",
        82..=91 => "academic",
        _ => "code",
    }
}

/// Mixed-quality multilingual corpus: mostly clean prose, plus markup, PII,
/// harmful phrases, boilerplate repetition, symbol spam, fragments and
/// near-duplicates.
pub fn mini_corpus(seed: u64, n: usize) -> Vec<Document> {
    let gen = TextGen::standard();
    let mut r = rng(seed);
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("doc-{i:05}");
        if i > 10 && r.gen_bool(0.06) {
            let src = docs[r.gen_range(0..docs.len())].clone();
            let edits = if r.gen_bool(0.3) { 0 } else { r.gen_range(1..4) };
            let text = edit_tokens(&mut r, &gen, &src.text, &src.lang, edits);
            let mut d = Document::new(id, text, src.source.clone(), src.lang.clone());
            d.meta.insert("synthetic".into(), "near_duplicate".into());
            docs.push(d);
            continue;
        }
        let source = pick_source(&mut r);
        let lang = if source == "code" { "en" } else { pick_lang(&mut r) };
        let units = r.gen_range(60..400);
        let mut text = gen.document(&mut r, source, lang, units);
        let kind = r.gen_range(0..100);
        let tag = match kind {
            0..=7 => {
                text = format!("<html><body><p>{}</p><script>var x = 1;</script></body></html>", text.replace("\n\n", "</p>\n<p>"));
                "markup"
            }
            8..=11 => {
                text.push_str(&format!(
                    " Contact me at user{}@example.com or 555-{:03}-{:04}.",
                    r.gen_range(0..999),
                    r.gen_range(100..999),
                    r.gen_range(0..9999)
                ));
                "pii"
            }
            12..=13 => {
                text = format!("{} {}", HARM_PHRASES.choose(&mut r).unwrap(), text);
                "harm"
            }
            14..=16 => {
                let line = gen.sentence(&mut r, lang);
                text = std::iter::repeat(line).take(12).collect::<Vec<_>>().join("\n");
                "boilerplate"
            }
            17..=18 => {
                text = (0..200).map(|_| *['#', '$', '%', '&', '*', '@', '!'].choose(&mut r).unwrap()).collect();
                "symbols"
            }
            19..=20 => {
                text = gen.sentence(&mut r, lang).chars().take(20).collect();
                "fragment"
            }
            _ => "clean",
        };
        let mut d = Document::new(id, text, source, lang);
        d.meta.insert("synthetic".into(), tag.into());
        docs.push(d);
    }
    docs
}

/// Corpus of `n` documents where `pairs` documents are near-copies (at most
/// `max_edit_frac` of tokens edited, at least one edit) of distinct earlier
/// originals. Returns the docs and `(original_id, copy_id)` pairs.
pub fn near_dup_corpus(seed: u64, n: usize, pairs: usize, max_edit_frac: f64) -> (Vec<Document>, Vec<(String, String)>) {
    let gen = TextGen::new(seed ^ 0x9e37, 20_000, usize::MAX);
    let mut r = rng(seed);
    let originals = n - pairs;
    let mut docs: Vec<Document> = (0..originals)
        .map(|i| {
            let lang = if r.gen_bool(0.8) { "en" } else { "zh" };
            let units = if lang == "en" { r.gen_range(150..400) } else { r.gen_range(300..800) };
            Document::new(format!("orig-{i:05}"), gen.document(&mut r, "web", lang, units), "web", lang)
        })
        .collect();
    let mut chosen: Vec<usize> = (0..originals).collect();
    chosen.shuffle(&mut r);
    chosen.truncate(pairs);
    let mut planted = Vec::with_capacity(pairs);
    for (k, &o) in chosen.iter().enumerate() {
        let src = &docs[o];
        let units = unit_count(&src.text, &src.lang);
        let max_edits = ((units as f64 * max_edit_frac).floor() as usize).max(1);
        let edits = r.gen_range(1..=max_edits);
        let text = edit_tokens(&mut r, &gen, &src.text, &src.lang, edits);
        let copy = Document::new(format!("copy-{k:05}"), text, "web", src.lang.clone());
        planted.push((src.id.clone(), copy.id.clone()));
        docs.push(copy);
    }
    // copies land after their originals but are spread through the tail
    let tail_start = originals;
    docs[tail_start..].shuffle(&mut r);
    (docs, planted)
}

/// Multilingual tokenizer-training corpus with a compact CJK inventory, so
/// full character coverage fits small vocabularies.
pub fn tokenizer_corpus(seed: u64, docs_per_lang: usize) -> Vec<Document> {
    let gen = TextGen::new(0x70c, 600, 40);
    let mut r = rng(seed);
    let mut out = Vec::new();
    for lang in LANGS {
        for i in 0..docs_per_lang {
            let units = r.gen_range(80..200);
            out.push(Document::new(format!("{lang}-{i:04}"), gen.document(&mut r, "web", lang, units), "web", *lang));
        }
    }
    out
}

/// Inputs for the loss-differential experiment: a training corpus for the
/// scorer, held-out unseen text and an evaluation set, all from one
/// distribution and pairwise disjoint.
pub struct ContamFixture {
    pub train: Vec<Document>,
    pub unseen: Vec<Document>,
    pub eval: Vec<Document>,
}

pub fn contam_fixture(seed: u64) -> ContamFixture {
    let gen = TextGen::new(0xc0a7, 1500, usize::MAX);
    let mut r = rng(seed);
    let mut make = |prefix: &str, n: usize| -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("{prefix}-{i:04}"), gen.document(&mut r, "web", "en", 120), "web", "en"))
            .collect()
    };
    ContamFixture {
        train: make("train", 1500),
        unseen: make("unseen", 200),
        eval: make("eval", 200),
    }
}

/// Prompt/response pairs with a fixed share of exact and near duplicates,
/// rule-violating and low-quality responses.
pub fn sft_pairs(seed: u64, n: usize) -> Vec<SftPair> {
    let gen = TextGen::new(0x5f7, 3000, usize::MAX);
    let mut r = rng(seed);
    let mut out: Vec<SftPair> = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("sft-{i:05}");
        if i > 5 && r.gen_bool(0.08) {
            let src = out[r.gen_range(0..out.len())].clone();
            out.push(SftPair { id, quality_score: None, ..src });
            continue;
        }
        let prompt = format!("{} {}", gen.sentence(&mut r, "en"), gen.sentence(&mut r, "en"));
        let units = r.gen_range(20..120);
        let mut response = gen.document(&mut r, "web", "en", units);
        match r.gen_range(0..100) {
            0..=5 => response = format!("As of last week, {response}"),
            6..=12 => response = gen.sentence(&mut r, "en").split_whitespace().take(3).collect::<Vec<_>>().join(" "),
            _ => {}
        }
        out.push(SftPair::new(&id, &prompt, &response, "open"));
    }
    out
}

/// Documents covering every `(source, lang)` cell of `plan` with `headroom`
/// times the tokens the plan draws from it.
pub fn schedule_corpus(seed: u64, plan: &StagePlan, est: &TokenEstimator, headroom: f64) -> Vec<Document> {
    let gen = TextGen::standard();
    let mut r = rng(seed);
    let mut need: std::collections::BTreeMap<(String, String), f64> = Default::default();
    for s in &plan.stages {
        for (k, v) in s.cell_targets() {
            *need.entry(k).or_insert(0.0) += v;
        }
    }
    let mut out = Vec::new();
    for ((source, lang), tokens) in need {
        let goal = (tokens * headroom).ceil() as u64;
        let mut have = 0u64;
        let mut i = 0;
        while have < goal {
            let units = r.gen_range(40..160);
            let d = Document::new(format!("{source}-{lang}-{i:06}"), gen.document(&mut r, &source, &lang, units), source.as_str(), lang.as_str());
            have += est.estimate(&d);
            out.push(d);
            i += 1;
        }
    }
    // interleave cells across shards as a real crawl would
    out.shuffle(&mut r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(mini_corpus(3, 50), mini_corpus(3, 50));
        assert_ne!(mini_corpus(3, 50), mini_corpus(4, 50));
    }

    #[test]
    fn near_dup_edits_bounded() {
        let (docs, pairs) = near_dup_corpus(1, 200, 20, 0.02);
        assert_eq!(docs.len(), 200);
        assert_eq!(pairs.len(), 20);
        let ids: std::collections::HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids.len(), 200);
    }

    #[test]
    fn all_languages_present() {
        let docs = mini_corpus(9, 400);
        for l in LANGS {
            assert!(docs.iter().any(|d| d.lang == *l), "{l}");
        }
        assert!(docs.iter().all(|d| d.validate().is_ok()));
    }
}
