use std::collections::BTreeMap;

use corpusforge::dedup::{
    cosine, decontaminate, dedup_pass, embed, extract_features, hamming, shingles, simhash64, Channel,
    DedupConfig, Deduper, SigIndex, Signature,
};
use corpusforge::synth;

#[path = "support/simhash_oracle.rs"]
mod simhash_oracle;
use simhash_oracle::simhash_oracle;
use corpusforge::Document;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sig(id: usize, h: u64) -> Signature<f64> {
    Signature {
        doc_id: id.to_string(),
        simhash: h,
        keyphrases: vec![],
        embedding: vec![0.0; 16],
    }
}

fn flip_bits(rng: &mut ChaCha8Rng, mut h: u64, n: u32) -> u64 {
    for _ in 0..n {
        h ^= 1u64 << rng.gen_range(0..64);
    }
    h
}

#[test]
fn banded_lookup_equals_brute_force_at_radius_3() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut index = SigIndex::<f64>::new(16);
    let mut hashes = Vec::new();
    let centers: Vec<u64> = (0..200).map(|_| rng.gen()).collect();
    for i in 0..10_000 {
        let c = centers[rng.gen_range(0..centers.len())];
        let n = rng.gen_range(0..6);
        let h = flip_bits(&mut rng, c, n);
        index.insert(sig(i, h), None).unwrap();
        hashes.push(h);
    }
    let mut nonempty = 0;
    for q in 0..500 {
        let query = if q % 2 == 0 {
            let n = rng.gen_range(0..5);
            flip_bits(&mut rng, centers[q % centers.len()], n)
        } else {
            rng.gen()
        };
        let brute: Vec<usize> = (0..hashes.len())
            .filter(|&i| (hashes[i] ^ query).count_ones() <= 3)
            .collect();
        nonempty += usize::from(!brute.is_empty());
        assert_eq!(index.hamming_ball(query, 3), brute);
    }
    assert!(nonempty > 100);
}

/// Direct transcription of the bit-vote definition.

fn random_words(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<String> {
    (0..n).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

/// Replaces a fraction of word positions with fresh out-of-vocabulary words.
fn edit(rng: &mut ChaCha8Rng, words: &[String], frac: f64) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            if rng.gen_bool(frac) {
                format!("z{}", rng.gen::<u32>())
            } else {
                w.clone()
            }
        })
        .collect()
}

fn feature_cosine(a: &BTreeMap<String, u32>, b: &BTreeMap<String, u32>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, &x)| b.get(k).map(|&y| x as f64 * y as f64))
        .sum();
    let n = |m: &BTreeMap<String, u32>| m.values().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

#[test]
fn simhash_hamming_tracks_angle() {
    // For random-hyperplane-like hashes E[hamming] = 64 * theta / pi.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for frac in [0.02, 0.1, 0.3] {
        let (mut observed, mut predicted) = (0.0, 0.0);
        let trials = 300;
        for _ in 0..trials {
            let a = random_words(&mut rng, 400, 100_000);
            let b = edit(&mut rng, &a, frac);
            let (fa, fb) = (shingles(&a.join(" ")), shingles(&b.join(" ")));
            let theta = feature_cosine(&fa.weights, &fb.weights).clamp(-1.0, 1.0).acos();
            predicted += 64.0 * theta / std::f64::consts::PI;
            observed += hamming(simhash64(fa.iter()), simhash64(fb.iter())) as f64;
        }
        let (o, p) = (observed / trials as f64, predicted / trials as f64);
        assert!((o - p).abs() <= 0.15 * p + 0.3, "frac {frac}: observed {o}, predicted {p}");
    }
}

/// The locality target as originally stated: >= 90% feature overlap should put
/// >= 95% of pairs within Hamming 3. At overlap 0.9 the angle is ~0.45 rad, so
/// the expected distance is ~9 bits and the target cannot hold for any 64-bit
/// SimHash. Kept for the record; the measured rate is printed.
#[test]
#[ignore = "unattainable for 64-bit SimHash; expected Hamming at 90% overlap is ~9 bits"]
fn ninety_percent_overlap_within_radius_3() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 1000;
    let mut within = 0;
    for _ in 0..trials {
        let a = random_words(&mut rng, 400, 100_000);
        let b = edit(&mut rng, &a, 0.05);
        let (fa, fb) = (shingles(&a.join(" ")), shingles(&b.join(" ")));
        if hamming(simhash64(fa.iter()), simhash64(fb.iter())) <= 3 {
            within += 1;
        }
    }
    let rate = within as f64 / trials as f64;
    println!("within radius 3: {rate:.3}");
    assert!(rate >= 0.95);
}

#[test]
fn first_occurrence_survives_and_order_of_match_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = random_words(&mut rng, 300, 50_000);
    let mut d = Deduper::<f64>::new(DedupConfig::default()).unwrap();
    let originals: Vec<Document> = (0..3)
        .map(|i| Document::new(format!("o{i}"), random_words(&mut rng, 300, 50_000).join(" "), "web", "en"))
        .collect();
    for o in &originals {
        assert_eq!(d.process(o).unwrap().channel, Channel::None);
    }
    let first = Document::new("a", base.join(" "), "web", "en");
    assert_eq!(d.process(&first).unwrap().channel, Channel::None);
    let near = Document::new("b", edit(&mut rng, &base, 0.02).join(" "), "web", "en");
    let dec = d.process(&near).unwrap();
    assert!(dec.is_duplicate());
    assert_eq!(dec.duplicate_of.as_deref(), Some("a"));
    assert_eq!(d.index().len(), 4);
}

const MILL: &str = "the river bends past the old mill where farmers once brought grain from the northern \
valleys and the miller kept careful ledgers of every sack that crossed his scale until the flood of that \
wet spring washed the wheel away and the village turned to trade in wool cloth leather";

fn replaced(pos: usize, word: &str) -> String {
    let mut w: Vec<&str> = MILL.split(' ').collect();
    w[pos] = word;
    w.join(" ")
}

fn oracle_hash(text: &str) -> u64 {
    simhash_oracle(&shingles(text).weights)
}

#[test]
fn fifty_words_one_changed_is_flagged_at_every_position() {
    assert_eq!(MILL.split(' ').count(), 50);
    let base = Document::new("base", MILL, "web", "en");
    for pos in 0..50 {
        let mut d = Deduper::<f64>::new(DedupConfig::default()).unwrap();
        d.process(&base).unwrap();
        let copy = Document::new("copy", replaced(pos, "copper"), "web", "en");
        let dec = d.process(&copy).unwrap();
        assert_eq!(dec.duplicate_of.as_deref(), Some("base"), "position {pos}");
    }
    // Last word: only one shingle differs and the bit vote stays within radius.
    let h = hamming(oracle_hash(MILL), oracle_hash(&replaced(49, "copper")));
    assert!(h <= 3, "hamming {h}");
    let mut d = Deduper::<f64>::new(DedupConfig::default()).unwrap();
    d.process(&base).unwrap();
    let dec = d.process(&Document::new("c", replaced(49, "copper"), "web", "en")).unwrap();
    assert_eq!((dec.channel, dec.distance), (Channel::Simhash, h as f64));
}

#[test]
fn unrelated_docs_both_kept() {
    let a = Document::new("a", MILL, "web", "en");
    let b = Document::new(
        "b",
        "quantum lattice models predict superconducting phases whose gap symmetry depends on doping \
         strength pressure and impurity scattering across layered cuprate crystals",
        "academic",
        "en",
    );
    let ha = oracle_hash(&a.text);
    let hb = oracle_hash(&b.text);
    assert!(hamming(ha, hb) > 3);
    let (ka, _) = extract_features(&a.text, 512);
    let (kb, _) = extract_features(&b.text, 512);
    assert!(cosine(&embed::<f64>(&ka, 256), &embed::<f64>(&kb, 256)) < 0.95);
    let (dec, _) = dedup_pass([&a, &b], SigIndex::<f64>::new(256), 3, 0.95).unwrap();
    assert!(dec.iter().all(|d| !d.is_duplicate()));
}

#[test]
fn paraphrase_of_eval_doc_removed_by_embedding_channel() {
    let eval = Document::new("q1", MILL, "eval", "en");
    let para = replaced(20, "meticulous");
    let h = hamming(oracle_hash(MILL), oracle_hash(&para));
    let (ke, _) = extract_features(MILL, 512);
    let (kp, _) = extract_features(&para, 512);
    let c: f64 = cosine(&embed::<f64>(&ke, 256), &embed::<f64>(&kp, 256));
    assert!(h > 3 && c >= 0.95, "hamming {h} cosine {c}");
    let train = vec![
        Document::new("t0", para, "web", "en"),
        Document::new("t1", "an unrelated note about sourdough starters and rye flour", "web", "en"),
    ];
    let (kept, report) = decontaminate(train, &[("exam", vec![eval])], 3, 0.95).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].id, "t1");
    assert_eq!(report.removed_by_channel.get("embedding"), Some(&1));
    assert_eq!(report.removed_by_set.get("exam"), Some(&1));
}

#[test]
fn one_survivor_per_planted_cluster() {
    let (docs, pairs) = synth::near_dup_corpus(3, 2000, 200, 0.01);
    let (decisions, _) = dedup_pass(&docs, SigIndex::<f64>::new(256), 3, 0.95).unwrap();
    let survivors: std::collections::BTreeSet<&str> = decisions
        .iter()
        .filter(|d| !d.is_duplicate())
        .map(|d| d.doc_id.as_str())
        .collect();
    for (orig, copy) in &pairs {
        assert!(survivors.contains(orig.as_str()));
        assert!(!survivors.contains(copy.as_str()), "{copy} survived");
    }
    assert_eq!(survivors.len(), docs.len() - pairs.len());
}

#[test]
fn decontamination_is_complete() {
    let (docs, pairs) = synth::near_dup_corpus(8, 1500, 150, 0.02);
    let copies: std::collections::BTreeSet<&str> = pairs.iter().map(|(_, c)| c.as_str()).collect();
    let (eval, train): (Vec<Document>, Vec<Document>) =
        docs.into_iter().partition(|d| copies.contains(d.id.as_str()));
    let sets = [("held_out", eval)];
    let (kept, first) = decontaminate(train, &sets, 3, 0.95).unwrap();
    assert!(first.docs_in > first.docs_out);
    let (again, second) = decontaminate(kept.clone(), &sets, 3, 0.95).unwrap();
    assert_eq!(second.docs_in, second.docs_out);
    assert_eq!(again, kept);
}

proptest! {
    #[test]
    fn simhash_matches_oracle(words in prop::collection::vec("[a-e]{1,3}", 0..40)) {
        let bag = shingles(&words.join(" "));
        prop_assert_eq!(simhash64(bag.iter()), simhash_oracle(&bag.weights));
    }

    #[test]
    fn embeddings_unit_or_zero(words in prop::collection::vec("[a-z]{1,6}", 0..60)) {
        let (kp, _) = extract_features(&words.join(" "), 512);
        let v: Vec<f64> = embed(&kp, 256);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if kp.is_empty() {
            prop_assert_eq!(n, 0.0);
        } else {
            prop_assert!((n - 1.0).abs() < 1e-9);
            prop_assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
        }
        let v32: Vec<f32> = embed(&kp, 256);
        for (a, b) in v.iter().zip(&v32) {
            prop_assert!((*a as f32 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn hamming_ball_matches_scan(hashes in prop::collection::vec(any::<u64>(), 1..60), q in any::<u64>(), r in 0u32..8) {
        let mut index = SigIndex::<f64>::new(16);
        for (i, &h) in hashes.iter().enumerate() {
            index.insert(sig(i, h), None).unwrap();
        }
        let expected: Vec<usize> = (0..hashes.len()).filter(|&i| hamming(hashes[i], q) <= r).collect();
        prop_assert_eq!(index.hamming_ball(q, r), expected);
    }
}
