use corpusforge::tokenizer::{train_texts, BpeConfig, BpeVocab, TokenizerError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "support/bpe_oracle.rs"]
mod bpe_oracle;
use bpe_oracle::{apply, oracle};

fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    let alphabets: [&[&str]; 3] = [
        &["a", "b", "c", " "],
        &["a", "b", "ab", "ba", " ", "é", "ñ"],
        &["中", "文", "字", "の", "a", " ", "한", "😀"],
    ];
    let alpha = alphabets[rng.gen_range(0..alphabets.len())];
    let docs = rng.gen_range(1..5);
    (0..docs)
        .map(|_| {
            let mut s = String::new();
            let len = rng.gen_range(0..500 / docs);
            while s.len() < len {
                s.push_str(alpha[rng.gen_range(0..alpha.len())]);
            }
            s
        })
        .collect()
}

#[test]
fn trainer_matches_oracle_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared = 0;
    for case in 0..200 {
        let texts = random_corpus(&mut rng);
        if texts.iter().all(|t| t.is_empty()) {
            continue;
        }
        let coverage = [1.0, 0.9, 0.5][case % 3];
        let target = rng.gen_range(256..360);
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let cfg = BpeConfig {
            target_vocab: target,
            coverage,
            ..BpeConfig::default()
        };
        let expected = oracle(&texts, target, coverage, 2);
        match train_texts(&refs, &cfg) {
            Ok(v) => {
                assert_eq!(v.merge_bytes(), expected, "case {case}");
                compared += 1;
            }
            // promotions alone overflow the target
            Err(TokenizerError::VocabTooSmall { .. }) => assert!(256 + expected.len() > target),
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(compared >= 150, "only {compared} cases compared");
}

/// Encodes by applying each merge to the whole sequence in training order.
fn sequential_encode(v: &BpeVocab, text: &str) -> Vec<Vec<u8>> {
    let mut seq: Vec<Vec<u8>> = text.bytes().map(|b| vec![b]).collect();
    for m in v.merge_bytes() {
        seq = apply(&seq, &m);
    }
    seq
}

fn trained() -> BpeVocab {
    let texts = [
        "the quick brown fox jumps over the lazy dog and the other dog",
        "中文文本中的中文字符 日本語のテキスト 한국어 텍스트",
        "aaaa abab baba aaab",
    ];
    let cfg = BpeConfig {
        target_vocab: 400,
        coverage: 1.0,
        ..BpeConfig::default()
    };
    train_texts(&texts, &cfg).unwrap()
}

fn vocab() -> &'static BpeVocab {
    static V: std::sync::OnceLock<BpeVocab> = std::sync::OnceLock::new();
    V.get_or_init(trained)
}

#[test]
fn merges_only_lower_token_count() {
    let v = vocab();
    let text = "the other dog jumps 中文字符 テキスト aaab";
    let mut last = usize::MAX;
    for n in 0..=v.merges().len() {
        let len = v.truncated(n).encode(text).len();
        assert!(len <= last);
        last = len;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_encode_identity(text in "\\PC{0,80}|[a-z ]{0,80}|[中文字の한 ]{0,40}") {
        let v = vocab();
        let ids = v.encode(&text);
        prop_assert_eq!(v.decode(&ids).unwrap(), text);
    }

    #[test]
    fn fast_encode_matches_sequential(text in "[a-z 中文字のテキ한국]{0,60}") {
        let v = vocab();
        let fast: Vec<Vec<u8>> = v
            .encode(&text)
            .iter()
            .map(|&i| v.token_bytes(i).unwrap().to_vec())
            .collect();
        prop_assert_eq!(fast, sequential_encode(v, &text));
    }

    #[test]
    fn training_is_deterministic(texts in prop::collection::vec("[ab c]{0,40}", 1..4)) {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let cfg = BpeConfig { target_vocab: 300, coverage: 1.0, ..BpeConfig::default() };
        if let Ok(a) = train_texts(&refs, &cfg) {
            let b = train_texts(&refs, &cfg).unwrap();
            prop_assert_eq!(a.size(), 256 + a.merges().len());
            prop_assert_eq!(a, b);
        }
    }
}
