//! Text normalization: markup removal, Unicode NFC, full-width folding and
//! whitespace collapsing, followed by caller-supplied regex rewrites.
//!
//! The whole chain is iterated to a fixpoint so `normalize` is idempotent even
//! when one step exposes work for an earlier one (an entity decoding to a tag,
//! a full-width `＜` folding to `<`).

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Document;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("pattern `{pattern}` does not compile: {source}")]
    RegexCompile {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    pub strip_html: bool,
    pub collapse_whitespace: bool,
    pub unicode_nfc: bool,
    /// Fold full-width ASCII (U+FF01..U+FF5E) for `zh*` and `ja*` documents.
    pub fold_fullwidth: bool,
    /// `(regex, replacement)` pairs applied in order.
    pub custom_patterns: Vec<(String, String)>,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            strip_html: true,
            collapse_whitespace: true,
            unicode_nfc: true,
            fold_fullwidth: true,
            custom_patterns: Vec::new(),
        }
    }
}

// A fixpoint is normally reached in two passes; the cap only guards
// against custom patterns that keep rewriting their own output.
const MAX_PASSES: usize = 16;

/// Compiled normalizer; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Normalizer {
    cfg: NormalizeConfig,
    custom: Vec<(Regex, String)>,
}

impl Normalizer {
    pub fn new(cfg: NormalizeConfig) -> Result<Self, NormalizeError> {
        let custom = cfg
            .custom_patterns
            .iter()
            .map(|(p, r)| {
                Regex::new(p)
                    .map(|re| (re, r.clone()))
                    .map_err(|source| NormalizeError::RegexCompile {
                        pattern: p.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { cfg, custom })
    }

    pub fn config(&self) -> &NormalizeConfig {
        &self.cfg
    }

    pub fn normalize(&self, doc: &Document) -> Document {
        Document {
            text: self.normalize_text(&doc.text, &doc.lang),
            ..doc.clone()
        }
    }

    pub fn normalize_text(&self, text: &str, lang: &str) -> String {
        let mut cur = self.pass(text, lang);
        for _ in 1..MAX_PASSES {
            let next = self.pass(&cur, lang);
            if next == cur {
                break;
            }
            cur = next;
        }
        cur
    }

    fn pass(&self, text: &str, lang: &str) -> String {
        let mut s = text.replace('\0', "");
        if self.cfg.strip_html {
            s = strip_html(&s);
        }
        if self.cfg.unicode_nfc {
            s = s.nfc().collect();
        }
        if self.cfg.fold_fullwidth && (lang.starts_with("zh") || lang.starts_with("ja")) {
            s = fold_fullwidth(&s);
        }
        for (re, rep) in &self.custom {
            if let std::borrow::Cow::Owned(o) = re.replace_all(&s, rep.as_str()) {
                s = o;
            }
        }
        if self.cfg.collapse_whitespace {
            s = collapse_whitespace(&s);
        }
        s
    }
}

/// One-shot helper that compiles `cfg` on each call.
pub fn normalize(doc: &Document, cfg: &NormalizeConfig) -> Result<Document, NormalizeError> {
    Ok(Normalizer::new(cfg.clone())?.normalize(doc))
}

struct HtmlRegexes {
    raw_blocks: Regex,
    comment: Regex,
    tag: Regex,
    stray: Regex,
}

fn html_regexes() -> &'static HtmlRegexes {
    static RE: OnceLock<HtmlRegexes> = OnceLock::new();
    RE.get_or_init(|| HtmlRegexes {
        // Unterminated script/style runs to end of text.
        raw_blocks: Regex::new(
            r"(?is)<script\b[^>]*>.*?(?:</script\s*>|\z)|<style\b[^>]*>.*?(?:</style\s*>|\z)",
        )
        .unwrap(),
        comment: Regex::new(r"(?s)<!--.*?(?:-->|\z)").unwrap(),
        tag: Regex::new(r"<[a-zA-Z!/?][^<>]*>").unwrap(),
        stray: Regex::new(r"<+([a-zA-Z!/?])").unwrap(),
    })
}

/// Block-level tags that should leave a line break behind.
fn is_block_tag(tag: &str) -> bool {
    let name: String = tag
        .trim_start_matches(['<', '/'])
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    matches!(
        name.as_str(),
        "p" | "br" | "div" | "li" | "ul" | "ol" | "tr" | "table" | "h1" | "h2" | "h3" | "h4"
            | "h5" | "h6" | "section" | "article" | "header" | "footer" | "blockquote" | "pre"
    )
}

/// Drops tags, comments and script/style bodies, then decodes entities.
///
/// A `<` that still precedes a tag-start character afterwards (an unterminated
/// tag) is removed so the output never contains markup openers.
pub fn strip_html(text: &str) -> String {
    let re = html_regexes();
    let s = strip_markup(text);
    let decoded = html_escape::decode_html_entities(&s);
    let s = strip_markup(&decoded);
    re.stray.replace_all(&s, "$1").into_owned()
}

fn strip_markup(text: &str) -> String {
    let re = html_regexes();
    let s = re.raw_blocks.replace_all(text, "");
    let s = re.comment.replace_all(&s, "");
    re.tag
        .replace_all(&s, |caps: &regex::Captures<'_>| {
            if is_block_tag(&caps[0]) {
                "\n"
            } else {
                ""
            }
        })
        .into_owned()
}

pub fn fold_fullwidth(text: &str) -> String {
    text.chars()
        .map(|c| match c as u32 {
            0xFF01..=0xFF5E => char::from_u32(c as u32 - 0xFF01 + 0x21).unwrap_or(c),
            _ => c,
        })
        .collect()
}

fn is_horizontal_space(c: char) -> bool {
    c != '\n' && c.is_whitespace()
}

/// Intra-line whitespace runs become one space, lines lose trailing blanks,
/// three or more newlines become exactly two, and the text is trimmed.
pub fn collapse_whitespace(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<String> = Vec::new();
    for line in text.split('\n') {
        let mut out = String::with_capacity(line.len());
        let mut in_space = false;
        for c in line.chars() {
            if is_horizontal_space(c) {
                in_space = true;
            } else {
                if in_space && !out.is_empty() {
                    out.push(' ');
                }
                in_space = false;
                out.push(c);
            }
        }
        lines.push(out);
    }
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0usize;
    for line in &lines {
        if line.is_empty() {
            blank_run += 1;
            continue;
        }
        if !out.is_empty() {
            out.push_str(if blank_run > 0 { "\n\n" } else { "\n" });
        }
        blank_run = 0;
        out.push_str(line);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(text: &str) -> String {
        Normalizer::new(NormalizeConfig::default())
            .unwrap()
            .normalize_text(text, "en")
    }

    #[test]
    fn strips_paragraph_tag() {
        assert_eq!(norm("<p>hello</p>"), "hello");
    }

    #[test]
    fn collapse_rule() {
        let cfg = NormalizeConfig {
            strip_html: false,
            unicode_nfc: false,
            ..NormalizeConfig::default()
        };
        let n = Normalizer::new(cfg).unwrap();
        // spaces/tabs collapse; three newlines keep one blank line
        assert_eq!(n.normalize_text("a  \t b\n\n\nc", "en"), "a b\n\nc");
        assert_eq!(n.normalize_text("a\nb", "en"), "a\nb");
        assert_eq!(n.normalize_text("  x  ", "en"), "x");
    }

    #[test]
    fn clean_text_unchanged() {
        assert_eq!(norm("abc"), "abc");
    }

    #[test]
    fn script_and_style_bodies_dropped() {
        assert_eq!(
            norm("a<script type=\"x\">var x = 1 < 2;</script>b<style>p{}</style>c"),
            "abc"
        );
    }

    #[test]
    fn entities_decoded_once_and_stable() {
        assert_eq!(norm("fish &amp; chips &#x4e2d; &eacute;"), "fish & chips 中 é");
        // decodes to markup, which is then stripped on the next pass
        assert_eq!(norm("&lt;b&gt;bold&lt;/b&gt;"), "bold");
    }

    #[test]
    fn fullwidth_folded_for_cjk_only() {
        let n = Normalizer::new(NormalizeConfig::default()).unwrap();
        assert_eq!(n.normalize_text("ＡＢＣ１２３", "zh-Hans"), "ABC123");
        assert_eq!(n.normalize_text("ＡＢＣ", "en"), "ＡＢＣ");
    }

    #[test]
    fn nfc_composes() {
        assert_eq!(norm("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn custom_patterns_apply_in_order() {
        let cfg = NormalizeConfig {
            custom_patterns: vec![("foo".into(), "bar".into()), ("bar".into(), "baz".into())],
            ..NormalizeConfig::default()
        };
        let n = Normalizer::new(cfg).unwrap();
        assert_eq!(n.normalize_text("foo", "en"), "baz");
    }

    #[test]
    fn bad_pattern_is_config_error() {
        let cfg = NormalizeConfig {
            custom_patterns: vec![("(".into(), "".into())],
            ..NormalizeConfig::default()
        };
        assert!(matches!(
            Normalizer::new(cfg),
            Err(NormalizeError::RegexCompile { .. })
        ));
    }

    #[test]
    fn metadata_preserved() {
        let mut d = Document::new("id", "<b>x</b>", "web", "en");
        d.meta.insert("url".into(), "u".into());
        let out = normalize(&d, &NormalizeConfig::default()).unwrap();
        assert_eq!(out.text, "x");
        assert_eq!((out.id, out.source, out.lang, out.meta), (d.id, d.source, d.lang, d.meta));
    }

    fn markup_residue(s: &str) -> bool {
        Regex::new(r"<[a-zA-Z!/]").unwrap().is_match(s)
    }

    proptest! {
        #[test]
        fn idempotent(text in r"(<[a-z/!]{0,3}>?|&[a-z#0-9]{0,6};?|[ \t\n\r]{1,4}|[a-zA-Z0-9]{1,5}|[＜＞＆ｐ語é\u{301}])*") {
            let n = Normalizer::new(NormalizeConfig::default()).unwrap();
            for lang in ["en", "zh"] {
                let once = n.normalize_text(&text, lang);
                prop_assert_eq!(n.normalize_text(&once, lang), once.clone());
                prop_assert!(!markup_residue(&once), "residue in {:?}", once);
            }
        }

        #[test]
        fn arbitrary_unicode_idempotent(text in "\\PC{0,64}") {
            let out = norm(&text);
            prop_assert_eq!(norm(&out), out.clone());
            prop_assert!(!markup_residue(&out));
        }
    }
}
