//! Greedy decoding with per-step attention capture and UNK replacement.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::{tokenize, Vocabulary, BOS, EOS, PAD, UNK, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::math;
use crate::pointer::{self, SourceExtension};
use crate::seq2seq::Seq2SeqModel;

pub const DEFAULT_MAX_LEN: usize = 60;

/// One attention row per decoder step, each a distribution over source positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionRecord {
    rows: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        AttentionRecord { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationResult {
    pub output_tokens: Vec<String>,
    pub attention: AttentionRecord,
    pub source_tokens: Vec<String>,
    /// `(output index, source index)` for every replaced UNK.
    pub unk_positions_replaced: Vec<(usize, usize)>,
}

impl TranslationResult {
    pub fn text(&self) -> String {
        self.output_tokens.join(" ")
    }
}

/// Replaces every UNK at output position `t` with the source token at the
/// argmax of attention row `t` (lowest index on ties).
pub fn replace_unks<S: AsRef<str>>(
    output_tokens: &[S],
    attention: &[Vec<f64>],
    source_tokens: &[S],
) -> Result<(Vec<String>, Vec<(usize, usize)>)> {
    if attention.len() != output_tokens.len() {
        return Err(Error::Contract(format!(
            "{} attention rows for {} output tokens",
            attention.len(),
            output_tokens.len()
        )));
    }
    let mut replaced = Vec::new();
    let mut out = Vec::with_capacity(output_tokens.len());
    for (t, (tok, row)) in output_tokens.iter().zip(attention).enumerate() {
        let tok = tok.as_ref();
        if tok != UNK_TOKEN {
            out.push(tok.to_string());
            continue;
        }
        if row.len() != source_tokens.len() {
            return Err(Error::Contract(format!(
                "attention row {t} has {} entries for {} source tokens",
                row.len(),
                source_tokens.len()
            )));
        }
        match math::argmax(row) {
            Some(s) => {
                out.push(source_tokens[s].as_ref().to_string());
                replaced.push((t, s));
            }
            None => out.push(tok.to_string()),
        }
    }
    Ok((out, replaced))
}

fn masked_argmax(scores: &mut [f64]) -> usize {
    for banned in [PAD, BOS] {
        if let Some(s) = scores.get_mut(banned) {
            *s = f64::NEG_INFINITY;
        }
    }
    math::argmax(scores).unwrap_or(EOS)
}

/// Greedy decode without UNK replacement. Returns the emitted tokens (EOS
/// excluded) and one attention row per decoder step taken.
pub fn greedy_decode<S: AsRef<str>>(
    model: &Seq2SeqModel,
    vocab: &Vocabulary,
    source_tokens: &[S],
    max_len: usize,
) -> Result<(Vec<String>, AttentionRecord)> {
    if source_tokens.is_empty() {
        return Err(Error::Input("empty source sentence".into()));
    }
    if vocab.len() != model.vocab_size() {
        return Err(Error::Input("vocabulary does not match the model".into()));
    }
    let ext = SourceExtension::new(vocab, source_tokens);
    let ids = vocab.encode(source_tokens, false, false);
    let enc = model.encode(&ids)?;
    let mut state = enc.final_state.clone();
    let mut prev = BOS;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..max_len {
        let step = model.decode_step(prev, &state, &enc);
        let choice = match step.p_gen {
            Some(p_gen) => {
                let copy = pointer::copy_distribution(&step.weights, &ext)?;
                let mixed = pointer::mix(p_gen, &math::softmax(&step.logits), &copy)?;
                let mut probs = mixed.probs().to_vec();
                masked_argmax(&mut probs)
            }
            None => {
                let mut logits = step.logits.clone();
                masked_argmax(&mut logits)
            }
        };
        rows.push(step.weights);
        state = step.state;
        if choice == EOS {
            break;
        }
        let token = ext.token(vocab, choice).unwrap_or(UNK_TOKEN);
        out.push(token.to_string());
        prev = if choice < vocab.len() { choice } else { UNK };
    }
    Ok((out, AttentionRecord::new(rows)))
}

pub fn translate_tokens<S: AsRef<str>>(
    model: &Seq2SeqModel,
    vocab: &Vocabulary,
    source_tokens: &[S],
    max_len: usize,
) -> Result<TranslationResult> {
    let (raw, attention) = greedy_decode(model, vocab, source_tokens, max_len)?;
    let source: Vec<String> = source_tokens.iter().map(|s| s.as_ref().to_string()).collect();
    let (output_tokens, unk_positions_replaced) = replace_unks(&raw, &attention.rows()[..raw.len()], &source)?;
    Ok(TranslationResult {
        output_tokens,
        attention,
        source_tokens: source,
        unk_positions_replaced,
    })
}

/// Tokenizes `source`, decodes greedily and applies UNK replacement.
pub fn translate(model: &Seq2SeqModel, vocab: &Vocabulary, source: &str, max_len: usize) -> Result<TranslationResult> {
    translate_tokens(model, vocab, &tokenize(source), max_len)
}
