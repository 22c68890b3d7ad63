//! Deterministic toy parallel corpus: modern sentences and their
//! word-by-word "Shakespearized" counterparts.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::SentencePair;

/// `(modern, shakespearean)`; identical entries are copied verbatim.
pub const WORDS: [(&str, &str); 30] = [
    ("you", "thou"),
    ("your", "thy"),
    ("are", "art"),
    ("yes", "ay"),
    ("no", "nay"),
    ("before", "ere"),
    ("often", "oft"),
    ("why", "wherefore"),
    ("has", "hath"),
    ("does", "doth"),
    ("here", "hither"),
    ("maybe", "perchance"),
    ("listen", "hark"),
    ("goodbye", "farewell"),
    ("the", "the"),
    ("king", "king"),
    ("love", "love"),
    ("night", "night"),
    ("sweet", "sweet"),
    ("fair", "fair"),
    ("lord", "lord"),
    ("come", "come"),
    ("go", "go"),
    ("speak", "speak"),
    ("heart", "heart"),
    ("my", "my"),
    ("is", "is"),
    ("to", "to"),
    ("queen", "queen"),
    ("moon", "moon"),
];

/// `n` distinct pairs with 3 to 7 words per sentence.
pub fn toy_pairs(n: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let len = rng.gen_range(3..=7);
        let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..WORDS.len())).collect();
        if !seen.insert(idx.clone()) {
            continue;
        }
        let source: Vec<String> = idx.iter().map(|&i| WORDS[i].0.into()).collect();
        let target: Vec<String> = idx.iter().map(|&i| WORDS[i].1.into()).collect();
        pairs.push(SentencePair::new(source, target).expect("non-empty by construction"));
    }
    pairs
}
