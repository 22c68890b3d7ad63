//! Painting to poem to Shakespearean prose, one translated line per poem line.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::decode::{self, TranslationResult};
use crate::error::Error;
use crate::poemgen::{self, ExtractorSet, PoemPolicy};
use crate::seq2seq::Seq2SeqModel;

/// Produces the intermediate poem for an image.
pub trait PoemSource {
    fn compose(&self, image: &[u8], seed: u64) -> crate::Result<Vec<String>>;
}

/// A trained poem policy with its extractors and vocabulary.
pub struct PoemModel<'a> {
    pub extractors: &'a ExtractorSet,
    pub policy: &'a PoemPolicy,
    pub vocab: &'a Vocabulary,
}

impl PoemSource for PoemModel<'_> {
    fn compose(&self, image: &[u8], seed: u64) -> crate::Result<Vec<String>> {
        let features = poemgen::extract_features(image, self.extractors, self.policy)?;
        let rollout = self.policy.sample(&features, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(poemgen::poem_lines(rollout.poem(self.policy.config().eos), self.vocab))
    }
}

/// Always returns the same lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPoem(pub Vec<String>);

impl PoemSource for FixedPoem {
    fn compose(&self, _: &[u8], _: u64) -> crate::Result<Vec<String>> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Translator<'a> {
    pub model: &'a Seq2SeqModel,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
}

impl Translator<'_> {
    pub fn translate(&self, line: &str) -> crate::Result<TranslationResult> {
        decode::translate(self.model, self.vocab, line, self.max_len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProseResult {
    pub painting_id: String,
    pub poem_lines: Vec<String>,
    /// One record per poem line, in poem order.
    pub translations: Vec<TranslationResult>,
    pub prose: String,
}

impl ProseResult {
    pub fn prose_lines(&self) -> impl Iterator<Item = &str> {
        self.prose.split('\n')
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Poem,
    Translation { line: usize },
}

impl core::fmt::Display for Stage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Stage::Poem => f.write_str("poem"),
            Stage::Translation { line } => write!(f, "translation of poem line {}", line + 1),
        }
    }
}

/// A failed run with everything produced before the failure.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub poem_lines: Vec<String>,
    pub translations: Vec<TranslationResult>,
    pub source: Error,
}

pub fn paint_to_prose(
    painting_id: &str,
    image: &[u8],
    poem: &dyn PoemSource,
    translator: &Translator<'_>,
    seed: u64,
) -> Result<ProseResult, PipelineError> {
    let poem_lines = poem.compose(image, seed).map_err(|source| PipelineError {
        stage: Stage::Poem,
        poem_lines: Vec::new(),
        translations: Vec::new(),
        source,
    })?;
    if poem_lines.is_empty() {
        return Err(PipelineError {
            stage: Stage::Poem,
            poem_lines,
            translations: Vec::new(),
            source: Error::Contract("poem has no lines".into()),
        });
    }
    let mut translations = Vec::with_capacity(poem_lines.len());
    for (line, text) in poem_lines.iter().enumerate() {
        match translator.translate(text) {
            Ok(t) => translations.push(t),
            Err(source) => {
                return Err(PipelineError {
                    stage: Stage::Translation { line },
                    poem_lines,
                    translations,
                    source,
                })
            }
        }
    }
    let prose = translations.iter().map(TranslationResult::text).collect::<Vec<_>>().join("\n");
    Ok(ProseResult {
        painting_id: painting_id.into(),
        poem_lines,
        translations,
        prose,
    })
}
