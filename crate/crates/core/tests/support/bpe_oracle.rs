//! Brute-force BPE trainer: recounts every pair after every merge and
//! works on byte strings, sharing nothing with the library.

use std::collections::{BTreeMap, HashSet};

pub type Merge = (Vec<u8>, Vec<u8>);

pub fn apply(seq: &[Vec<u8>], m: &Merge) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == m.0 && seq[i + 1] == m.1 {
            out.push([m.0.clone(), m.1.clone()].concat());
            i += 2;
        } else {
            out.push(seq[i].clone());
            i += 1;
        }
    }
    out
}

/// Recount-everything trainer working on byte strings.
pub fn oracle(texts: &[String], target: usize, coverage: f64, min_count: u64) -> Vec<Merge> {
    let mut seqs: Vec<Vec<Vec<u8>>> = texts
        .iter()
        .map(|t| t.bytes().map(|b| vec![b]).collect())
        .collect();
    let mut tokens: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();

    let mut freq: BTreeMap<char, u64> = BTreeMap::new();
    for t in texts {
        for c in t.chars() {
            *freq.entry(c).or_default() += 1;
        }
    }
    let total: u64 = freq.values().sum();
    let mut order: Vec<(char, u64)> = freq.into_iter().collect();
    order.sort_by_key(|&(c, n)| (std::cmp::Reverse(n), c));
    let mut mass = 0;
    for (c, n) in order {
        if mass as f64 >= coverage * total as f64 {
            break;
        }
        mass += n;
        let b = c.to_string().into_bytes();
        for k in 2..=b.len() {
            if tokens.insert(b[..k].to_vec()) {
                let m = (b[..k - 1].to_vec(), vec![b[k - 1]]);
                seqs = seqs.iter().map(|s| apply(s, &m)).collect();
                merges.push(m);
            }
        }
    }

    while 256 + merges.len() < target {
        let mut counts: BTreeMap<Merge, u64> = BTreeMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        // BTreeMap iterates pairs in lexicographic order; keep the first max.
        let best = counts
            .into_iter()
            .filter(|(m, _)| !tokens.contains(&[m.0.clone(), m.1.clone()].concat()))
            .fold(None::<(Merge, u64)>, |acc, (m, n)| match acc {
                Some((_, bn)) if bn >= n => acc,
                _ => Some((m, n)),
            });
        match best {
            Some((m, n)) if n >= min_count => {
                tokens.insert([m.0.clone(), m.1.clone()].concat());
                seqs = seqs.iter().map(|s| apply(s, &m)).collect();
                merges.push(m);
            }
            _ => break,
        }
    }
    merges
}
