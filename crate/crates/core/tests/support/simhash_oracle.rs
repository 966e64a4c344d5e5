use std::collections::BTreeMap;

use corpusforge::text::fnv1a64;

/// Evaluates the bit-vote definition one bit at a time: bit `i` is set iff
/// the weighted votes of features whose hash has bit `i` set outweigh the rest.
pub fn simhash_oracle(bag: &BTreeMap<String, u32>) -> u64 {
    let mut out = 0u64;
    for bit in 0..64 {
        let mut vote = 0i64;
        for (f, &w) in bag {
            let h = fnv1a64(f.as_bytes());
            vote += if h & (1 << bit) != 0 {
                w as i64
            } else {
                -(w as i64)
            };
        }
        if vote > 0 {
            out |= 1 << bit;
        }
    }
    out
}
