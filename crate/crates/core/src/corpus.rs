//! Tokenization, the shared source/target vocabulary, aligned sentence
//! pairs and the Shakespearean/modern word lexicon.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

pub const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

pub const DEFAULT_MIN_COUNT: usize = 2;
pub const DEFAULT_MAX_SIZE: usize = 12_000;

/// Lowercases, splits every non-alphanumeric, non-whitespace character into
/// its own token and collapses runs of whitespace.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in sentence.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(core::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            let mut punct = String::new();
            punct.extend(ch.to_lowercase());
            tokens.push(punct);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    source: Vec<String>,
    target: Vec<String>,
}

impl SentencePair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Input("sentence pair sides must be non-empty".into()));
        }
        let has_newline = |side: &[String]| side.iter().any(|t| t.contains('\n'));
        if has_newline(&source) || has_newline(&target) {
            return Err(Error::Input("sentence pair contains an embedded newline".into()));
        }
        Ok(SentencePair { source, target })
    }

    pub fn from_text(source: &str, target: &str) -> Result<Self> {
        Self::new(tokenize(source), tokenize(target))
    }

    pub fn source(&self) -> &[String] {
        &self.source
    }

    pub fn target(&self) -> &[String] {
        &self.target
    }
}

/// Builds pairs from aligned line lists. Line `i` of each side forms pair `i`;
/// lines blank on both sides are dropped.
pub fn align_lines<S: AsRef<str>, T: AsRef<str>>(
    source_lines: &[S],
    target_lines: &[T],
) -> Result<Vec<SentencePair>> {
    if source_lines.len() != target_lines.len() {
        return Err(Error::Alignment {
            source_lines: source_lines.len(),
            target_lines: target_lines.len(),
        });
    }
    let mut pairs = Vec::with_capacity(source_lines.len());
    for (i, (s, t)) in source_lines.iter().zip(target_lines).enumerate() {
        let src = tokenize(s.as_ref());
        let tgt = tokenize(t.as_ref());
        match (src.is_empty(), tgt.is_empty()) {
            (true, true) => continue,
            (false, false) => pairs.push(SentencePair { source: src, target: tgt }),
            _ => return Err(Error::OneSidedBlank { line: i + 1 }),
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub train: Vec<SentencePair>,
    pub val: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(train: Vec<SentencePair>, val: Vec<SentencePair>, test: Vec<SentencePair>) -> Self {
        ParallelCorpus { train, val, test }
    }

    /// `(train, val, test)` pair counts.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

/// Token/id bijection shared by source and target sides. Ids 0..3 are
/// always PAD, UNK, BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
        let ids = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary { tokens, ids }
    }

    /// Rebuilds a vocabulary from its id-ordered token list, as serialized.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Input(
                "vocabulary must start with <pad>, <unk>, <s>, </s>".into(),
            ));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::Input(format!("invalid vocabulary token at id {i}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Pools token counts over both sides of every pair. Tokens below
    /// `min_count` are dropped; the rest are ranked by descending count with
    /// lexicographic tie-breaking and truncated to `max_size` entries in total.
    pub fn build(pairs: &[SentencePair], min_count: usize, max_size: usize) -> Result<Self> {
        let sequences = pairs.iter().flat_map(|p| [p.source(), p.target()]);
        Self::build_from_sequences(sequences, min_count, max_size)
    }

    /// Same counting and ranking rules as [`Vocabulary::build`] over arbitrary token sequences.
    pub fn build_from_sequences<'a, I>(sequences: I, min_count: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_count < 1 {
            return Err(Error::Parameter("min_count must be at least 1".into()));
        }
        if max_size <= RESERVED.len() {
            return Err(Error::Parameter("max_size must exceed the 4 reserved tokens".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
            .collect();
        // BTreeMap iteration is lexicographic, so a stable sort on count keeps ties ordered.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        let mut vocab = Self::reserved_only();
        for (tok, _) in ranked.into_iter().take(max_size - RESERVED.len()) {
            vocab.push(tok);
        }
        Ok(vocab)
    }

    /// Appends `token` if absent and returns its id.
    pub fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Maps tokens to ids, sending out-of-vocabulary tokens to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], bos: bool, eos: bool) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        if bos {
            ids.push(BOS);
        }
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        if eos {
            ids.push(EOS);
        }
        ids
    }

    /// Ids outside the vocabulary decode to the UNK token.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// FNV-1a over the newline-joined token list; stored in checkpoints to
    /// detect a vocabulary mismatch.
    pub fn fingerprint(&self) -> u64 {
        let mut hash = math::fnv1a(0, b"");
        for tok in &self.tokens {
            hash = math::fnv1a(hash, tok.as_bytes());
            hash = math::fnv1a(hash, b"\n");
        }
        hash
    }
}

/// Shakespearean/modern word pairs, lowercased and deduplicated in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    pairs: Vec<(String, String)>,
}

impl Lexicon {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b) in pairs {
            let pair = (a.as_ref().trim().to_lowercase(), b.as_ref().trim().to_lowercase());
            if pair.0.is_empty() || pair.1.is_empty() {
                continue;
            }
            if seen.insert(pair.clone()) {
                out.push(pair);
            }
        }
        Lexicon { pairs: out }
    }

    /// `(shakespearean, modern)` pairs.
    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
