//! Teacher-forced maximum-likelihood training with Adam, global-norm
//! clipping, per-epoch validation and best-checkpoint selection.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Vocabulary};
use crate::decode;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::math;
use crate::seq2seq::{AttentionVariant, Example, ModelConfig, Params, Seq2SeqModel, GLOBAL_HIDDEN_SIZE, POINTER_HIDDEN_SIZE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    ValidationLoss,
    ValidationBleu,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::ValidationLoss => "val_loss",
            Selection::ValidationBleu => "val_bleu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "val_loss" => Ok(Selection::ValidationLoss),
            "val_bleu" => Ok(Selection::ValidationBleu),
            other => Err(Error::Config(format!("unknown selection criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub embedding_dim: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub max_sentence_length: usize,
    pub clip_norm: f64,
    pub attention: AttentionVariant,
    pub pointer: bool,
    pub selection: Selection,
    /// Decode length used when selecting by validation BLEU.
    pub max_decode_len: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.001,
            epochs: 25,
            batch_size: 64,
            hidden_size: GLOBAL_HIDDEN_SIZE,
            embedding_dim: crate::embeddings::DEFAULT_DIM,
            adam: AdamConfig::default(),
            seed: 0,
            max_sentence_length: 50,
            clip_norm: 5.0,
            attention: AttentionVariant::Global,
            pointer: false,
            selection: Selection::ValidationLoss,
            max_decode_len: decode::DEFAULT_MAX_LEN,
        }
    }
}

impl TrainingConfig {
    /// Defaults for the pointer model: hidden size 256.
    pub fn pointer_default() -> Self {
        TrainingConfig {
            hidden_size: POINTER_HIDDEN_SIZE,
            pointer: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("adam.epsilon", self.adam.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("hidden_size", self.hidden_size),
            ("embedding_dim", self.embedding_dim),
            ("max_sentence_length", self.max_sentence_length),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, b) in [("adam.beta1", self.adam.beta1), ("adam.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embedding_dim: self.embedding_dim,
            hidden_size: self.hidden_size,
            attention: self.attention,
            pointer: self.pointer,
            seed: self.seed,
        }
    }
}

/// Mean negative log-softmax probability of the gold ids over non-PAD positions.
pub fn cross_entropy_loss(logits: &[Vec<f64>], target_ids: &[usize], pad_id: usize) -> Result<f64> {
    if logits.len() != target_ids.len() {
        return Err(Error::Contract(format!(
            "{} logit rows for {} targets",
            logits.len(),
            target_ids.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &gold) in logits.iter().zip(target_ids) {
        if gold == pad_id {
            continue;
        }
        if gold >= row.len() {
            return Err(Error::Contract(format!("target id {gold} outside {} logits", row.len())));
        }
        total += math::log_sum_exp(row) - row[gold];
        count += 1;
    }
    if count == 0 {
        return Err(Error::Input("loss undefined: every target is PAD".into()));
    }
    Ok(total / count as f64)
}

pub struct Adam {
    config: AdamConfig,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, learning_rate: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - libm::pow(beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(beta2, f64::from(self.t));
        self.m.zip_mut(grads, |m, g| {
            for (m, g) in m.data_mut().iter_mut().zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
            }
        });
        self.v.zip_mut(grads, |v, g| {
            for (v, g) in v.data_mut().iter_mut().zip(g.data()) {
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
        });
        let ms = self.m.named();
        let vs = self.v.named();
        let mut i = 0;
        params.for_each_mut(|_, p| {
            let (m, v) = (ms[i].1.data(), vs[i].1.data());
            for ((p, m), v) in p.data_mut().iter_mut().zip(m).zip(v) {
                *p -= learning_rate * (m / c1) / (math::sqrt(v / c2) + epsilon);
            }
            i += 1;
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Token-mean loss of the batch before the update.
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Token-mean loss over `examples` without touching parameters.
pub fn evaluate_loss(model: &Seq2SeqModel, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        total += model.example_loss(ex)?;
        tokens += ex.target_len();
    }
    if tokens == 0 {
        return Err(Error::Input("no target tokens to evaluate".into()));
    }
    Ok(total / tokens as f64)
}

/// Token-mean loss and its gradient over a batch.
pub fn batch_gradient(model: &Seq2SeqModel, batch: &[Example]) -> Result<(f64, Params)> {
    let mut grads = model.params().zeros_like();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in batch {
        total += model.accumulate_gradient(ex, &mut grads)?;
        tokens += ex.target_len();
    }
    if tokens == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    grads.scale(1.0 / tokens as f64);
    Ok((total / tokens as f64, grads))
}

/// One clipped Adam update on `batch`.
pub fn train_step(
    model: &mut Seq2SeqModel,
    optimizer: &mut Adam,
    batch: &[Example],
    learning_rate: f64,
    clip_norm: f64,
) -> Result<StepReport> {
    let (loss, mut grads) = batch_gradient(model, batch)?;
    let grad_norm = math::sqrt(grads.sum_squares());
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("loss {loss}, gradient norm {grad_norm}"),
        });
    }
    let clipped = grad_norm > clip_norm;
    if clipped {
        grads.scale(clip_norm / grad_norm);
    }
    optimizer.step(model.params_mut(), &grads, learning_rate);
    Ok(StepReport { loss, grad_norm, clipped })
}

/// Numericalized splits ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    /// Pairs dropped from training for exceeding the length limit.
    pub dropped: usize,
}

impl TrainingData {
    /// Training pairs longer than `max_sentence_length` on either side are
    /// dropped; validation pairs are kept.
    pub fn from_corpus(corpus: &ParallelCorpus, vocab: &Vocabulary, max_sentence_length: usize) -> Self {
        let mut dropped = 0;
        let train = corpus
            .train
            .iter()
            .filter(|p| {
                let keep = p.source().len() <= max_sentence_length && p.target().len() <= max_sentence_length;
                dropped += usize::from(!keep);
                keep
            })
            .map(|p| Example::from_pair(p, vocab))
            .collect();
        let val = corpus.val.iter().map(|p| Example::from_pair(p, vocab)).collect();
        TrainingData { train, val, dropped }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_bleu: Option<f64>,
    pub clipped_steps: usize,
}

pub trait TrainObserver {
    fn epoch_finished(&mut self, _record: &EpochRecord) {}
    fn gradient_clipped(&mut self, _epoch: usize, _norm: f64) {}
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Seq2SeqModel,
    /// 0 when no epoch ran (the best model is the initialization).
    pub best_epoch: usize,
    pub final_model: Seq2SeqModel,
    pub history: Vec<EpochRecord>,
}

fn batches(examples: &[Example], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].source.len(), examples[i].target_len()));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn validation_bleu(model: &Seq2SeqModel, vocab: &Vocabulary, corpus_val: &[crate::corpus::SentencePair], max_len: usize) -> Result<f64> {
    let mut pairs = Vec::with_capacity(corpus_val.len());
    for p in corpus_val {
        let t = decode::translate_tokens(model, vocab, p.source(), max_len)?;
        pairs.push((t.output_tokens, p.target().to_vec()));
    }
    Ok(evaluation::corpus_report(&pairs)?.average_target_bleu)
}

/// Trains `model` for `config.epochs` epochs over length-bucketed batches
/// whose order is shuffled each epoch by a generator seeded from
/// `config.seed`. Deterministic for a fixed seed.
pub fn train(
    mut model: Seq2SeqModel,
    data: &TrainingData,
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
    config: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let mut optimizer = Adam::new(model.params(), config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = batches(&data.train, config.batch_size);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::INFINITY;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        let mut clipped_steps = 0;
        for idx in &order {
            let batch: Vec<Example> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let report = train_step(&mut model, &mut optimizer, &batch, config.learning_rate, config.clip_norm)
                .map_err(|e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                    other => other,
                })?;
            if report.clipped {
                clipped_steps += 1;
                observer.gradient_clipped(epoch, report.grad_norm);
            }
            let n: usize = batch.iter().map(Example::target_len).sum();
            total += report.loss * n as f64;
            tokens += n;
        }
        if !model.params().is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameters after update".into(),
            });
        }
        let train_loss = total / tokens as f64;
        let val_loss = if data.val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, &data.val)?)
        };
        let val_bleu = match config.selection {
            Selection::ValidationBleu if !corpus.val.is_empty() => {
                Some(validation_bleu(&model, vocab, &corpus.val, config.max_decode_len)?)
            }
            _ => None,
        };
        let score = match (config.selection, val_bleu) {
            (Selection::ValidationBleu, Some(b)) => -b,
            _ => val_loss.unwrap_or(train_loss),
        };
        if score < best_score {
            best_score = score;
            best = model.clone();
            best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_bleu,
            clipped_steps,
        };
        observer.epoch_finished(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_model: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cross_entropy_examples() {
        let near_one_hot = vec![vec![50.0, 0.0, 0.0], vec![0.0, 0.0, 50.0]];
        assert!(cross_entropy_loss(&near_one_hot, &[0, 2], 99).unwrap() < 1e-20);

        let uniform = vec![vec![0.3; 5]; 3];
        let loss = cross_entropy_loss(&uniform, &[1, 2, 4], 0).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);

        let mut padded = uniform.clone();
        padded.push(vec![9.0, -3.0, 0.0, 1.0, 2.0]);
        assert_eq!(cross_entropy_loss(&padded, &[1, 2, 4, 0], 0).unwrap(), loss);

        assert!(matches!(cross_entropy_loss(&uniform, &[0, 0, 0], 0), Err(Error::Input(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig {
            learning_rate: -1.0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainingConfig::pointer_default().hidden_size, 256);
        assert_eq!(TrainingConfig::default().hidden_size, 1576);
        assert_eq!(TrainingConfig::default().learning_rate, 0.001);
        assert_eq!(TrainingConfig::default().epochs, 25);
    }
}
