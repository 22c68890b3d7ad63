//! Single-layer LSTM encoder-decoder with global (bilinear) or Bahdanau
//! (additive) attention and an optional copy gate.
//!
//! Both variants project `[decoder hidden; context]` to vocabulary logits.
//! They differ only in which decoder state scores the encoder outputs:
//! global attention scores with the hidden state produced at the current
//! step, Bahdanau attention with the incoming state and feeds the context
//! into the cell alongside the token embedding.
//!
//! Gradients are computed by hand-written backpropagation through time.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SentencePair, Vocabulary, EOS, UNK};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::pointer::SourceExtension;
use crate::tensor::Tensor;

pub const INIT_BOUND: f64 = 0.08;
pub const GLOBAL_HIDDEN_SIZE: usize = 1576;
pub const POINTER_HIDDEN_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    Global,
    Bahdanau,
}

impl AttentionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::Global => "global",
            AttentionVariant::Bahdanau => "bahdanau",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(AttentionVariant::Global),
            "bahdanau" => Ok(AttentionVariant::Bahdanau),
            other => Err(Error::Config(format!("unknown attention variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub attention: AttentionVariant,
    pub pointer: bool,
    pub seed: u64,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.embedding_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }

    fn decoder_input_dim(&self) -> usize {
        match self.attention {
            AttentionVariant::Global => self.embedding_dim,
            AttentionVariant::Bahdanau => self.embedding_dim + self.hidden_size,
        }
    }

    /// Canonical parameter names and shapes, in checkpoint order.
    pub fn manifest(&self) -> Vec<(&'static str, usize, usize)> {
        let (v, e, h) = (self.vocab_size, self.embedding_dim, self.hidden_size);
        let mut m = vec![
            ("embedding", v, e),
            ("encoder.weight", 4 * h, e + h),
            ("encoder.bias", 1, 4 * h),
            ("decoder.weight", 4 * h, self.decoder_input_dim() + h),
            ("decoder.bias", 1, 4 * h),
        ];
        match self.attention {
            AttentionVariant::Global => m.push(("attention.general", h, h)),
            AttentionVariant::Bahdanau => {
                m.push(("attention.encoder_proj", h, h));
                m.push(("attention.decoder_proj", h, h));
                m.push(("attention.v", 1, h));
            }
        }
        m.push(("output.weight", v, 2 * h));
        m.push(("output.bias", 1, v));
        if self.pointer {
            m.push(("pointer.weight", 1, 2 * h + e));
            m.push(("pointer.bias", 1, 1));
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionParams {
    Global {
        general: Tensor,
    },
    Bahdanau {
        encoder_proj: Tensor,
        decoder_proj: Tensor,
        v: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Every learned tensor of a model. Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub embedding: Tensor,
    pub encoder_w: Tensor,
    pub encoder_b: Tensor,
    pub decoder_w: Tensor,
    pub decoder_b: Tensor,
    pub attention: AttentionParams,
    pub output_w: Tensor,
    pub output_b: Tensor,
    pub gate: Option<GateParams>,
}

impl Params {
    /// Builds parameters from tensors given in `ModelConfig::manifest` order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let manifest = config.manifest();
        if tensors.len() != manifest.len() {
            return Err(Error::Input(format!(
                "expected {} parameter tensors, got {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), t) in manifest.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::Input(format!(
                    "parameter `{name}` has shape {:?}, expected ({r}, {c})",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let embedding = next();
        let encoder_w = next();
        let encoder_b = next();
        let decoder_w = next();
        let decoder_b = next();
        let attention = match config.attention {
            AttentionVariant::Global => AttentionParams::Global { general: next() },
            AttentionVariant::Bahdanau => AttentionParams::Bahdanau {
                encoder_proj: next(),
                decoder_proj: next(),
                v: next(),
            },
        };
        let output_w = next();
        let output_b = next();
        let gate = config.pointer.then(|| GateParams {
            weight: next(),
            bias: next(),
        });
        Ok(Params {
            embedding,
            encoder_w,
            encoder_b,
            decoder_w,
            decoder_b,
            attention,
            output_w,
            output_b,
            gate,
        })
    }

    fn init(config: &ModelConfig, embedding: Tensor) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = config
            .manifest()
            .into_iter()
            .map(|(name, r, c)| {
                if name == "embedding" {
                    embedding.clone()
                } else {
                    Tensor::uniform(r, c, INIT_BOUND, &mut rng)
                }
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Tensors with canonical names, in manifest order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("embedding", &self.embedding),
            ("encoder.weight", &self.encoder_w),
            ("encoder.bias", &self.encoder_b),
            ("decoder.weight", &self.decoder_w),
            ("decoder.bias", &self.decoder_b),
        ];
        match &self.attention {
            AttentionParams::Global { general } => out.push(("attention.general", general)),
            AttentionParams::Bahdanau {
                encoder_proj,
                decoder_proj,
                v,
            } => {
                out.push(("attention.encoder_proj", encoder_proj));
                out.push(("attention.decoder_proj", decoder_proj));
                out.push(("attention.v", v));
            }
        }
        out.push(("output.weight", &self.output_w));
        out.push(("output.bias", &self.output_b));
        if let Some(g) = &self.gate {
            out.push(("pointer.weight", &g.weight));
            out.push(("pointer.bias", &g.bias));
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Tensor)) {
        f("embedding", &mut self.embedding);
        f("encoder.weight", &mut self.encoder_w);
        f("encoder.bias", &mut self.encoder_b);
        f("decoder.weight", &mut self.decoder_w);
        f("decoder.bias", &mut self.decoder_b);
        match &mut self.attention {
            AttentionParams::Global { general } => f("attention.general", general),
            AttentionParams::Bahdanau {
                encoder_proj,
                decoder_proj,
                v,
            } => {
                f("attention.encoder_proj", encoder_proj);
                f("attention.decoder_proj", decoder_proj);
                f("attention.v", v);
            }
        }
        f("output.weight", &mut self.output_w);
        f("output.bias", &mut self.output_b);
        if let Some(g) = &mut self.gate {
            f("pointer.weight", &mut g.weight);
            f("pointer.bias", &mut g.bias);
        }
    }

    /// Visits `self` and `other` tensor by tensor. Both must share a layout.
    pub fn zip_mut(&mut self, other: &Params, mut f: impl FnMut(&mut Tensor, &Tensor)) {
        let others = other.named();
        let mut i = 0;
        self.for_each_mut(|_, t| {
            f(t, others[i].1);
            i += 1;
        });
    }

    pub fn sum_squares(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_squares()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, t| t.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn bit_eq(&self, other: &Params) -> bool {
        let a = self.named();
        let b = other.named();
        a.len() == b.len() && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    /// FNV-1a over names, shapes and raw bits of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = math::fnv1a(0, b"params");
        for (name, t) in self.named() {
            h = math::fnv1a(h, name.as_bytes());
            h = math::fnv1a(h, &(t.rows() as u64).to_le_bytes());
            h = math::fnv1a(h, &(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h = math::fnv1a(h, &v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Encoder outputs plus the per-position attention keys (`W e_s`) that every
/// decoder step reuses.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSource {
    pub outputs: Vec<Vec<f64>>,
    pub final_state: DecoderState,
    keys: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub state: DecoderState,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    pub p_gen: Option<f64>,
}

/// One teacher-forced training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Encoder input ids (UNK for out-of-vocabulary tokens).
    pub source: Vec<usize>,
    /// Copy targets per source position.
    pub source_ext: SourceExtension,
    /// `BOS` followed by the target ids.
    pub decoder_input: Vec<usize>,
    /// Target ids followed by `EOS`. Out-of-vocabulary targets that occur in
    /// the source carry their extended id, all others UNK.
    pub gold: Vec<usize>,
}

impl Example {
    pub fn from_pair(pair: &SentencePair, vocab: &Vocabulary) -> Self {
        let source_ext = SourceExtension::new(vocab, pair.source());
        let mut decoder_input = vocab.encode(pair.target(), true, false);
        let mut gold: Vec<usize> = pair
            .target()
            .iter()
            .map(|t| source_ext.extended_id(vocab, t))
            .collect();
        gold.push(EOS);
        decoder_input.truncate(gold.len());
        Example {
            source: vocab.encode(pair.source(), false, false),
            source_ext,
            decoder_input,
            gold,
        }
    }

    pub fn target_len(&self) -> usize {
        self.gold.len()
    }
}

struct LstmCache {
    input: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_forward(w: &Tensor, b: &Tensor, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (DecoderState, LstmCache) {
    let hs = h_prev.len();
    let mut input = Vec::with_capacity(x.len() + hs);
    input.extend_from_slice(x);
    input.extend_from_slice(h_prev);
    let z = w.affine(&input, b);
    let i: Vec<f64> = z[..hs].iter().map(|&v| math::sigmoid(v)).collect();
    let f: Vec<f64> = z[hs..2 * hs].iter().map(|&v| math::sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * hs..3 * hs].iter().map(|&v| math::tanh(v)).collect();
    let o: Vec<f64> = z[3 * hs..].iter().map(|&v| math::sigmoid(v)).collect();
    let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| math::tanh(v)).collect();
    let h: Vec<f64> = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmCache {
        input,
        i,
        f,
        g,
        o,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    (DecoderState { h, c }, cache)
}

/// Returns `(d input, d h_prev, d c_prev)` and accumulates weight gradients.
fn lstm_backward(
    w: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
    cache: &LstmCache,
    dh: &[f64],
    dc_next: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hs = dh.len();
    let mut dz = vec![0.0; 4 * hs];
    let mut dc_prev = vec![0.0; hs];
    for k in 0..hs {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dc * g * i * (1.0 - i);
        dz[hs + k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dz[2 * hs + k] = dc * i * (1.0 - g * g);
        dz[3 * hs + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    gw.outer_acc(&dz, &cache.input);
    for (b, d) in gb.data_mut().iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dinput = w.matvec_t(&dz);
    let dh_prev = dinput.split_off(cache.input.len() - hs);
    (dinput, dh_prev, dc_prev)
}

fn weighted_context(weights: &[f64], outputs: &[Vec<f64>]) -> Vec<f64> {
    let mut ctx = vec![0.0; outputs[0].len()];
    for (w, e) in weights.iter().zip(outputs) {
        math::axpy(*w, e, &mut ctx);
    }
    ctx
}

fn require_outputs(outputs: &[Vec<f64>]) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::Precondition("attention over an empty source".into()));
    }
    Ok(())
}

/// Luong "general" attention: `score_s = h_t^T W_a e_s`.
pub fn attend_global(general: &Tensor, decoder_hidden: &[f64], encoder_outputs: &[Vec<f64>]) -> Result<Attention> {
    require_outputs(encoder_outputs)?;
    let scores: Vec<f64> = encoder_outputs
        .iter()
        .map(|e| math::dot(decoder_hidden, &general.matvec(e)))
        .collect();
    let weights = math::softmax(&scores);
    Ok(Attention {
        context: weighted_context(&weights, encoder_outputs),
        weights,
    })
}

/// Additive attention: `score_s = v^T tanh(W_1 e_s + W_2 h_{t-1})`.
pub fn attend_bahdanau(
    encoder_proj: &Tensor,
    decoder_proj: &Tensor,
    v: &[f64],
    decoder_hidden_prev: &[f64],
    encoder_outputs: &[Vec<f64>],
) -> Result<Attention> {
    require_outputs(encoder_outputs)?;
    let q = decoder_proj.matvec(decoder_hidden_prev);
    let scores: Vec<f64> = encoder_outputs
        .iter()
        .map(|e| {
            let a: Vec<f64> = encoder_proj
                .matvec(e)
                .iter()
                .zip(&q)
                .map(|(p, q)| math::tanh(p + q))
                .collect();
            math::dot(v, &a)
        })
        .collect();
    let weights = math::softmax(&scores);
    Ok(Attention {
        context: weighted_context(&weights, encoder_outputs),
        weights,
    })
}

struct StepCache {
    input_id: usize,
    lstm: LstmCache,
    h: Vec<f64>,
    c: Vec<f64>,
    h_prev: Vec<f64>,
    weights: Vec<f64>,
    context: Vec<f64>,
    additive: Vec<Vec<f64>>,
    logits: Vec<f64>,
    p_gen: f64,
    gate_input: Vec<f64>,
}

struct EncoderCache {
    steps: Vec<LstmCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    params: Params,
}

impl Seq2SeqModel {
    /// Fresh model: pretrained embedding rows, everything else seeded
    /// uniform in `[-0.08, 0.08]`.
    pub fn new(config: ModelConfig, embedding: &EmbeddingMatrix) -> Result<Self> {
        config.validate()?;
        if embedding.rows() != config.vocab_size || embedding.dim() != config.embedding_dim {
            return Err(Error::Config(format!(
                "embedding is {}x{}, model expects {}x{}",
                embedding.rows(),
                embedding.dim(),
                config.vocab_size,
                config.embedding_dim
            )));
        }
        let params = Params::init(&config, embedding.matrix().clone())?;
        Ok(Seq2SeqModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expected = config.manifest();
        let actual = params.named();
        let matches = expected.len() == actual.len()
            && expected
                .iter()
                .zip(&actual)
                .all(|((n, r, c), (m, t))| n == m && t.shape() == (*r, *c));
        if !matches {
            return Err(Error::Input("parameters do not match the model configuration".into()));
        }
        Ok(Seq2SeqModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn embed(&self, id: usize) -> &[f64] {
        let id = if id < self.config.vocab_size { id } else { UNK };
        self.params.embedding.row(id)
    }

    fn encode_cached(&self, source_ids: &[usize]) -> Result<(EncodedSource, EncoderCache)> {
        if source_ids.is_empty() {
            return Err(Error::Precondition("cannot encode an empty source".into()));
        }
        let hs = self.config.hidden_size;
        let mut state = DecoderState {
            h: vec![0.0; hs],
            c: vec![0.0; hs],
        };
        let mut outputs = Vec::with_capacity(source_ids.len());
        let mut steps = Vec::with_capacity(source_ids.len());
        for &id in source_ids {
            let (next, cache) = lstm_forward(
                &self.params.encoder_w,
                &self.params.encoder_b,
                self.embed(id),
                &state.h,
                &state.c,
            );
            outputs.push(next.h.clone());
            steps.push(cache);
            state = next;
        }
        let keys = match &self.params.attention {
            AttentionParams::Global { general } => outputs.iter().map(|e| general.matvec(e)).collect(),
            AttentionParams::Bahdanau { encoder_proj, .. } => {
                outputs.iter().map(|e| encoder_proj.matvec(e)).collect()
            }
        };
        Ok((
            EncodedSource {
                outputs,
                final_state: state,
                keys,
            },
            EncoderCache { steps },
        ))
    }

    /// Runs the encoder left to right. The final state initializes the decoder.
    pub fn encode(&self, source_ids: &[usize]) -> Result<EncodedSource> {
        self.encode_cached(source_ids).map(|(enc, _)| enc)
    }

    fn step_forward(&self, prev_token: usize, state: &DecoderState, enc: &EncodedSource) -> StepCache {
        let p = &self.params;
        let x = self.embed(prev_token);
        let (new_state, lstm, weights, context, additive) = match &p.attention {
            AttentionParams::Global { .. } => {
                let (new_state, lstm) = lstm_forward(&p.decoder_w, &p.decoder_b, x, &state.h, &state.c);
                let scores: Vec<f64> = enc.keys.iter().map(|k| math::dot(&new_state.h, k)).collect();
                let weights = math::softmax(&scores);
                let context = weighted_context(&weights, &enc.outputs);
                (new_state, lstm, weights, context, Vec::new())
            }
            AttentionParams::Bahdanau { decoder_proj, v, .. } => {
                let q = decoder_proj.matvec(&state.h);
                let additive: Vec<Vec<f64>> = enc
                    .keys
                    .iter()
                    .map(|k| k.iter().zip(&q).map(|(a, b)| math::tanh(a + b)).collect())
                    .collect();
                let scores: Vec<f64> = additive.iter().map(|a| math::dot(v.data(), a)).collect();
                let weights = math::softmax(&scores);
                let context = weighted_context(&weights, &enc.outputs);
                let mut input = x.to_vec();
                input.extend_from_slice(&context);
                let (new_state, lstm) = lstm_forward(&p.decoder_w, &p.decoder_b, &input, &state.h, &state.c);
                (new_state, lstm, weights, context, additive)
            }
        };
        let mut out_in = new_state.h.clone();
        out_in.extend_from_slice(&context);
        let logits = p.output_w.affine(&out_in, &p.output_b);
        let (p_gen, gate_input) = match &p.gate {
            Some(g) => {
                let mut gi = context.clone();
                gi.extend_from_slice(&new_state.h);
                gi.extend_from_slice(x);
                (math::sigmoid(math::dot(g.weight.data(), &gi) + g.bias.data()[0]), gi)
            }
            None => (1.0, Vec::new()),
        };
        StepCache {
            input_id: prev_token,
            lstm,
            h: new_state.h,
            c: new_state.c,
            h_prev: state.h.clone(),
            weights,
            context,
            additive,
            logits,
            p_gen,
            gate_input,
        }
    }

    /// One decoder step from `prev_token` and `state`.
    pub fn decode_step(&self, prev_token: usize, state: &DecoderState, enc: &EncodedSource) -> StepOutput {
        let cache = self.step_forward(prev_token, state, enc);
        StepOutput {
            p_gen: self.params.gate.as_ref().map(|_| cache.p_gen),
            state: DecoderState { h: cache.h, c: cache.c },
            logits: cache.logits,
            weights: cache.weights,
            context: cache.context,
        }
    }

    /// Summed negative log-likelihood of `example` under teacher forcing.
    pub fn example_loss(&self, example: &Example) -> Result<f64> {
        self.forward_backward(example, None)
    }

    /// Adds `d(summed NLL)/d(params)` into `grads` and returns the summed NLL.
    pub fn accumulate_gradient(&self, example: &Example, grads: &mut Params) -> Result<f64> {
        self.forward_backward(example, Some(grads))
    }

    /// Per-step NLL and its gradients with respect to logits, `p_gen` and the
    /// attention weights (copy path).
    fn step_loss(&self, cache: &StepCache, gold: usize, ext: &SourceExtension) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let v = self.config.vocab_size;
        let probs = math::softmax(&cache.logits);
        if self.params.gate.is_none() {
            let g = if gold < v { gold } else { UNK };
            let nll = math::log_sum_exp(&cache.logits) - cache.logits[g];
            let mut dlogits = probs;
            dlogits[g] -= 1.0;
            return (nll, dlogits, 0.0, Vec::new());
        }
        let pg = cache.p_gen;
        let pv = if gold < v { probs[gold] } else { 0.0 };
        let pc: f64 = cache
            .weights
            .iter()
            .zip(ext.ids())
            .filter(|(_, &id)| id == gold)
            .map(|(w, _)| w)
            .sum();
        let total = pg * pv + (1.0 - pg) * pc;
        let nll = -math::ln(total);
        let dtotal = -1.0 / total;
        let mut dlogits = vec![0.0; v];
        if gold < v {
            let dpv = dtotal * pg;
            for (j, d) in dlogits.iter_mut().enumerate() {
                *d = -dpv * pv * probs[j];
            }
            dlogits[gold] += dpv * pv;
        }
        let dp_gen = dtotal * (pv - pc);
        let dweights = ext
            .ids()
            .iter()
            .map(|&id| if id == gold { dtotal * (1.0 - pg) } else { 0.0 })
            .collect();
        (nll, dlogits, dp_gen, dweights)
    }

    fn forward_backward(&self, ex: &Example, mut grads: Option<&mut Params>) -> Result<f64> {
        if ex.decoder_input.len() != ex.gold.len() || ex.gold.is_empty() {
            return Err(Error::Contract("decoder inputs and gold targets must align".into()));
        }
        if ex.source_ext.ids().len() != ex.source.len() {
            return Err(Error::Contract("copy ids must align with the source".into()));
        }
        let (enc, enc_cache) = self.encode_cached(&ex.source)?;
        let mut state = enc.final_state.clone();
        let mut steps = Vec::with_capacity(ex.gold.len());
        let mut step_grads = Vec::with_capacity(ex.gold.len());
        let mut loss = 0.0;
        for (&input, &gold) in ex.decoder_input.iter().zip(&ex.gold) {
            let cache = self.step_forward(input, &state, &enc);
            let (nll, dlogits, dp_gen, dweights) = self.step_loss(&cache, gold, &ex.source_ext);
            loss += nll;
            state = DecoderState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            };
            if grads.is_some() {
                step_grads.push((dlogits, dp_gen, dweights));
                steps.push(cache);
            }
        }
        let Some(grads) = grads.as_deref_mut() else {
            return Ok(loss);
        };
        self.backward(ex, &enc, &enc_cache, &steps, &step_grads, grads);
        Ok(loss)
    }

    fn backward(
        &self,
        ex: &Example,
        enc: &EncodedSource,
        enc_cache: &EncoderCache,
        steps: &[StepCache],
        step_grads: &[(Vec<f64>, f64, Vec<f64>)],
        g: &mut Params,
    ) {
        let p = &self.params;
        let hs = self.config.hidden_size;
        let es = self.config.embedding_dim;
        let src_len = enc.outputs.len();
        let mut d_enc = vec![vec![0.0; hs]; src_len];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];

        for (cache, (dlogits, dp_gen, dweights_copy)) in steps.iter().zip(step_grads).rev() {
            let mut dh = dh_next.clone();
            let mut demb = vec![0.0; es];

            let mut out_in = cache.h.clone();
            out_in.extend_from_slice(&cache.context);
            g.output_w.outer_acc(dlogits, &out_in);
            for (b, d) in g.output_b.data_mut().iter_mut().zip(dlogits) {
                *b += d;
            }
            let dout = p.output_w.matvec_t(dlogits);
            math::axpy(1.0, &dout[..hs], &mut dh);
            let mut dctx = dout[hs..].to_vec();

            if let (Some(gate), Some(ggate)) = (&p.gate, &mut g.gate) {
                let dz = dp_gen * cache.p_gen * (1.0 - cache.p_gen);
                ggate.weight.outer_acc(&[dz], &cache.gate_input);
                ggate.bias.data_mut()[0] += dz;
                let w = gate.weight.data();
                math::axpy(dz, &w[..hs], &mut dctx);
                math::axpy(dz, &w[hs..2 * hs], &mut dh);
                math::axpy(dz, &w[2 * hs..], &mut demb);
            }

            let mut dweights = if dweights_copy.is_empty() {
                vec![0.0; src_len]
            } else {
                dweights_copy.clone()
            };

            match (&p.attention, &mut g.attention) {
                (AttentionParams::Global { general }, AttentionParams::Global { general: g_general }) => {
                    for (s, e) in enc.outputs.iter().enumerate() {
                        dweights[s] += math::dot(&dctx, e);
                        math::axpy(cache.weights[s], &dctx, &mut d_enc[s]);
                    }
                    let dscore = softmax_backward(&cache.weights, &dweights);
                    let mut weighted_enc = vec![0.0; hs];
                    for s in 0..src_len {
                        math::axpy(dscore[s], &enc.keys[s], &mut dh);
                        math::axpy(dscore[s], &enc.outputs[s], &mut weighted_enc);
                    }
                    g_general.outer_acc(&cache.h, &weighted_enc);
                    let u = general.matvec_t(&cache.h);
                    for s in 0..src_len {
                        math::axpy(dscore[s], &u, &mut d_enc[s]);
                    }
                    let (dx, dh_prev, dc_prev) =
                        lstm_backward(&p.decoder_w, &mut g.decoder_w, &mut g.decoder_b, &cache.lstm, &dh, &dc_next);
                    math::axpy(1.0, &dx, &mut demb);
                    dh_next = dh_prev;
                    dc_next = dc_prev;
                }
                (
                    AttentionParams::Bahdanau {
                        encoder_proj,
                        decoder_proj,
                        v,
                    },
                    AttentionParams::Bahdanau {
                        encoder_proj: g_enc,
                        decoder_proj: g_dec,
                        v: g_v,
                    },
                ) => {
                    let (dinput, mut dh_prev, dc_prev) =
                        lstm_backward(&p.decoder_w, &mut g.decoder_w, &mut g.decoder_b, &cache.lstm, &dh, &dc_next);
                    math::axpy(1.0, &dinput[..es], &mut demb);
                    math::axpy(1.0, &dinput[es..], &mut dctx);
                    for (s, e) in enc.outputs.iter().enumerate() {
                        dweights[s] += math::dot(&dctx, e);
                        math::axpy(cache.weights[s], &dctx, &mut d_enc[s]);
                    }
                    let dscore = softmax_backward(&cache.weights, &dweights);
                    let mut dq = vec![0.0; hs];
                    for s in 0..src_len {
                        let a = &cache.additive[s];
                        math::axpy(dscore[s], a, g_v.data_mut());
                        let dpre: Vec<f64> = a
                            .iter()
                            .zip(v.data())
                            .map(|(a, v)| dscore[s] * v * (1.0 - a * a))
                            .collect();
                        g_enc.outer_acc(&dpre, &enc.outputs[s]);
                        encoder_proj.matvec_t_acc(&dpre, &mut d_enc[s]);
                        math::axpy(1.0, &dpre, &mut dq);
                    }
                    g_dec.outer_acc(&dq, &cache.h_prev);
                    decoder_proj.matvec_t_acc(&dq, &mut dh_prev);
                    dh_next = dh_prev;
                    dc_next = dc_prev;
                }
                _ => unreachable!("gradient layout matches parameter layout"),
            }

            let row = if cache.input_id < self.config.vocab_size { cache.input_id } else { UNK };
            math::axpy(1.0, &demb, g.embedding.row_mut(row));
        }

        for s in (0..src_len).rev() {
            let mut dh = d_enc[s].clone();
            math::axpy(1.0, &dh_next, &mut dh);
            let (dx, dh_prev, dc_prev) = lstm_backward(
                &p.encoder_w,
                &mut g.encoder_w,
                &mut g.encoder_b,
                &enc_cache.steps[s],
                &dh,
                &dc_next,
            );
            let row = if ex.source[s] < self.config.vocab_size { ex.source[s] } else { UNK };
            math::axpy(1.0, &dx, g.embedding.row_mut(row));
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }
}

fn softmax_backward(weights: &[f64], dweights: &[f64]) -> Vec<f64> {
    let inner = math::dot(weights, dweights);
    weights.iter().zip(dweights).map(|(w, d)| w * (d - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(attention: AttentionVariant, pointer: bool) -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            embedding_dim: 3,
            hidden_size: 4,
            attention,
            pointer,
            seed: 11,
        }
    }

    fn model(attention: AttentionVariant, pointer: bool) -> Seq2SeqModel {
        let cfg = config(attention, pointer);
        let mut vocab = Vocabulary::reserved_only();
        for w in ["a", "b", "c"] {
            vocab.push(w);
        }
        let emb = EmbeddingMatrix::random(&vocab, cfg.embedding_dim, 5);
        Seq2SeqModel::new(cfg, &emb).unwrap()
    }

    #[test]
    fn encode_shapes() {
        let m = model(AttentionVariant::Global, false);
        assert_eq!(m.encode(&[4]).unwrap().outputs.len(), 1);
        let enc = m.encode(&[4, 5, 6, 1, 4]).unwrap();
        assert_eq!(enc.outputs.len(), 5);
        assert!(enc.outputs.iter().all(|o| o.len() == 4));
        assert!(matches!(m.encode(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_parameters_give_zero_encoder_outputs() {
        let mut m = model(AttentionVariant::Global, false);
        m.params_mut().for_each_mut(|_, t| t.fill(0.0));
        let enc = m.encode(&[4, 5, 6]).unwrap();
        assert!(enc.outputs.iter().flatten().all(|&v| v == 0.0));
        assert!(enc.final_state.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_attention_examples() {
        let w = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let single = attend_global(&w, &[0.3, -0.2], &[vec![2.0, 5.0]]).unwrap();
        assert_eq!(single.weights, vec![1.0]);
        assert_eq!(single.context, vec![2.0, 5.0]);

        let uniform = attend_global(&w, &[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert!(uniform.weights.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        // h = [1, 0], e_0 = [0, 0], e_1 = [ln 3, 0] -> scores [0, ln 3]
        let ln3 = 3f64.ln();
        let a = attend_global(&w, &[1.0, 0.0], &[vec![0.0, 0.0], vec![ln3, 0.0]]).unwrap();
        assert!((a.weights[0] - 0.25).abs() < 1e-12);
        assert!((a.weights[1] - 0.75).abs() < 1e-12);
        assert!(attend_global(&w, &[1.0, 0.0], &[]).is_err());
    }

    #[test]
    fn bahdanau_attention_examples() {
        let eye = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w2 = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let outs = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let single = attend_bahdanau(&eye, &w2, &[1.0, 1.0], &[0.1, 0.2], &outs[..1]).unwrap();
        assert_eq!(single.weights, vec![1.0]);
        let zero_v = attend_bahdanau(&eye, &w2, &[0.0, 0.0], &[0.1, 0.2], &outs).unwrap();
        assert_eq!(zero_v.weights, vec![0.5, 0.5]);

        // q = W2 h = [0.5, -1]; s_0 = tanh(1.5) + tanh(-1); s_1 = tanh(0.5) + tanh(0)
        let a = attend_bahdanau(&eye, &w2, &[1.0, 1.0], &[0.5, -0.5], &outs).unwrap();
        let s0 = 1.5f64.tanh() + (-1.0f64).tanh();
        let s1 = 0.5f64.tanh();
        let w0 = s0.exp() / (s0.exp() + s1.exp());
        assert!((a.weights[0] - w0).abs() < 1e-12);
        assert!((a.weights[1] - (1.0 - w0)).abs() < 1e-12);
        assert!((a.context[0] - w0).abs() < 1e-12);
    }

    #[test]
    fn decode_step_contract() {
        for variant in [AttentionVariant::Global, AttentionVariant::Bahdanau] {
            let m = model(variant, true);
            let enc = m.encode(&[4, 5, 6]).unwrap();
            let a = m.decode_step(2, &enc.final_state, &enc);
            assert_eq!(a.logits.len(), 7);
            assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let b = m.decode_step(2, &enc.final_state, &enc);
            assert_eq!(a, b);
            let a2 = m.decode_step(4, &a.state, &enc);
            let b2 = m.decode_step(4, &b.state, &enc);
            assert_eq!(a2, b2);
            let p = a.p_gen.unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn params_round_trip_through_manifest_order() {
        let m = model(AttentionVariant::Bahdanau, true);
        let tensors: Vec<Tensor> = m.params().named().into_iter().map(|(_, t)| t.clone()).collect();
        let names: Vec<&str> = m.params().named().into_iter().map(|(n, _)| n).collect();
        let manifest: Vec<&str> = m.config().manifest().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names, manifest);
        let p = Params::from_tensors(m.config(), tensors).unwrap();
        assert!(p.bit_eq(m.params()));
        assert!(Params::from_tensors(m.config(), Vec::new()).is_err());
    }

    #[test]
    fn example_from_pair_marks_copyable_targets() {
        let mut vocab = Vocabulary::reserved_only();
        vocab.push("hail");
        let pair = SentencePair::from_text("hail romeo", "hail romeo tybalt").unwrap();
        let ex = Example::from_pair(&pair, &vocab);
        assert_eq!(ex.source, vec![4, UNK]);
        assert_eq!(ex.decoder_input, vec![crate::corpus::BOS, 4, UNK, UNK]);
        assert_eq!(ex.gold, vec![4, 5, UNK, EOS]);
    }
}
