//! Small text and hashing primitives shared across modules.

/// FNV-1a 64-bit offset basis.
pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a 64-bit prime.
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a state over more bytes.
pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; spreads FNV output evenly over all 64 bits.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of `(seed, key)`, stable across runs and platforms.
pub fn seeded_hash(seed: u64, key: &str) -> u64 {
    let h = fnv1a64_extend(FNV_OFFSET, &seed.to_le_bytes());
    mix64(fnv1a64_extend(h, key.as_bytes()))
}

/// True with probability `fraction` over uniformly distributed hashes.
pub fn hash_below_fraction(hash: u64, fraction: f64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    if fraction >= 1.0 {
        return true;
    }
    // 2^64 as f64 is exact; the product is < 2^64 so the cast cannot saturate.
    let threshold = (fraction * 18_446_744_073_709_551_616.0) as u64;
    hash < threshold
}

/// Scripts written without spaces between words (Han, kana, Hangul) plus CJK punctuation.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F     // CJK symbols and punctuation
        | 0x3040..=0x30FF   // hiragana, katakana
        | 0x3100..=0x312F   // bopomofo
        | 0x31F0..=0x31FF   // katakana phonetic extensions
        | 0x3400..=0x4DBF   // ext A
        | 0x4E00..=0x9FFF   // unified ideographs
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF   // compatibility ideographs
        | 0xFF65..=0xFF9F   // halfwidth katakana
        | 0x20000..=0x2FA1F // ext B..F, compat supplement
    )
}

/// Fraction of non-whitespace characters that are CJK.
pub fn cjk_fraction(text: &str) -> f64 {
    let mut total = 0usize;
    let mut cjk = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if is_cjk(c) {
            cjk += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        cjk as f64 / total as f64
    }
}

/// Word-level tokens: whitespace-delimited, every CJK codepoint its own token,
/// ASCII lowercased.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c.to_ascii_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn word_tokenizer() {
        assert_eq!(tokenize_words("Hello World"), ["hello", "world"]);
        assert_eq!(tokenize_words("你好world"), ["你", "好", "world"]);
        assert!(tokenize_words("").is_empty());
        assert_eq!(tokenize_words("  ÀB  c\n"), ["Àb", "c"]);
    }

    #[test]
    fn fraction_edges() {
        assert!(!hash_below_fraction(0, 0.0));
        assert!(hash_below_fraction(u64::MAX, 1.0));
        assert!(hash_below_fraction(0, 1e-12));
    }
}
