//! Copy mechanism: a generation gate mixes the decoder's vocabulary
//! distribution with a copy distribution read off the attention weights.
//!
//! Source tokens missing from the vocabulary get extended ids `V, V+1, ...`
//! in order of first appearance, so a copied word can be emitted verbatim
//! even though the decoder never had an embedding for it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::math;

/// `sigmoid(w . [context; hidden; input_embedding] + b)`
pub fn generation_gate(weight: &[f64], bias: f64, context: &[f64], hidden: &[f64], input_embedding: &[f64]) -> f64 {
    debug_assert_eq!(weight.len(), context.len() + hidden.len() + input_embedding.len());
    let (wc, rest) = weight.split_at(context.len());
    let (wh, wx) = rest.split_at(hidden.len());
    math::sigmoid(math::dot(wc, context) + math::dot(wh, hidden) + math::dot(wx, input_embedding) + bias)
}

/// Extended ids for one source sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceExtension {
    ids: Vec<usize>,
    oov: Vec<String>,
    vocab_size: usize,
}

impl SourceExtension {
    pub fn new<S: AsRef<str>>(vocab: &Vocabulary, source: &[S]) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ids = source
            .iter()
            .map(|tok| {
                let tok = tok.as_ref();
                if let Some(id) = vocab.id(tok) {
                    return id;
                }
                let k = match oov.iter().position(|o| o == tok) {
                    Some(k) => k,
                    None => {
                        oov.push(tok.to_string());
                        oov.len() - 1
                    }
                };
                vocab.len() + k
            })
            .collect();
        SourceExtension {
            ids,
            oov,
            vocab_size: vocab.len(),
        }
    }

    /// Builds an extension directly from extended ids; used by fixtures that
    /// have no string vocabulary.
    pub fn from_ids(ids: Vec<usize>, vocab_size: usize, oov: Vec<String>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size + oov.len()) {
            return Err(Error::Contract(format!("extended id {bad} out of range")));
        }
        Ok(SourceExtension { ids, oov, vocab_size })
    }

    /// Extended id per source position.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn oov_tokens(&self) -> &[String] {
        &self.oov
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oov.len()
    }

    /// Vocabulary id, else extended id if the token occurs in the source, else UNK.
    pub fn extended_id(&self, vocab: &Vocabulary, token: &str) -> usize {
        vocab
            .id(token)
            .or_else(|| self.oov.iter().position(|o| o == token).map(|k| self.vocab_size + k))
            .unwrap_or(UNK)
    }

    pub fn token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> Option<&'a str> {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            self.oov.get(id - self.vocab_size).map(String::as_str)
        }
    }
}

/// Probabilities over the vocabulary followed by the source's extended tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedDistribution {
    probs: Vec<f64>,
    vocab_size: usize,
    oov: Vec<String>,
}

impl ExtendedDistribution {
    pub fn new(probs: Vec<f64>, vocab_size: usize, oov: Vec<String>) -> Result<Self> {
        if probs.len() != vocab_size + oov.len() {
            return Err(Error::Contract(format!(
                "distribution has {} entries, expected {}",
                probs.len(),
                vocab_size + oov.len()
            )));
        }
        Ok(ExtendedDistribution { probs, vocab_size, oov })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn oov_tokens(&self) -> &[String] {
        &self.oov
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// `P(w) = sum of weights at the source positions holding w`.
pub fn copy_distribution(weights: &[f64], source: &SourceExtension) -> Result<ExtendedDistribution> {
    if weights.len() != source.ids.len() {
        return Err(Error::Contract(format!(
            "{} attention weights for {} source positions",
            weights.len(),
            source.ids.len()
        )));
    }
    let mut probs = vec![0.0; source.extended_size()];
    for (&w, &id) in weights.iter().zip(&source.ids) {
        probs[id] += w;
    }
    ExtendedDistribution::new(probs, source.vocab_size, source.oov.clone())
}

/// `P(w) = p_gen * P_vocab(w) + (1 - p_gen) * P_copy(w)`, with `P_vocab = 0`
/// on extended-only tokens.
pub fn mix(p_gen: f64, vocab_dist: &[f64], copy: &ExtendedDistribution) -> Result<ExtendedDistribution> {
    if vocab_dist.len() != copy.vocab_size {
        return Err(Error::Contract(format!(
            "vocabulary distribution has {} entries, copy distribution expects {}",
            vocab_dist.len(),
            copy.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&p_gen) {
        return Err(Error::Contract(format!("p_gen {p_gen} outside [0, 1]")));
    }
    let probs = copy
        .probs
        .iter()
        .enumerate()
        .map(|(id, &pc)| {
            let pv = vocab_dist.get(id).copied().unwrap_or(0.0);
            p_gen * pv + (1.0 - p_gen) * pc
        })
        .collect();
    ExtendedDistribution::new(probs, copy.vocab_size, copy.oov.clone())
}
