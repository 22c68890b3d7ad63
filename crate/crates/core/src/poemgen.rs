//! Toy image-to-poem generator: pluggable feature extractors, a recurrent
//! policy conditioned on a painting clue, relevance and poeticness
//! discriminators used as rewards, and REINFORCE training.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Line separator inside a poem token sequence.
pub const NEWLINE_TOKEN: &str = "<nl>";
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const INIT_BOUND: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Object,
    Sentiment,
    Scene,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Object, Role::Sentiment, Role::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Object => "object",
            Role::Sentiment => "sentiment",
            Role::Scene => "scene",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Maps raw image bytes to a fixed-dimension vector.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn extract(&self, image: &[u8]) -> Result<Vec<f64>>;
}

/// Deterministic stand-in for a pretrained CNN: a salted hash of the image
/// bytes seeds a generator that fills the vector uniformly in [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyExtractor {
    dim: usize,
    salt: u64,
}

impl ToyExtractor {
    pub fn new(dim: usize, salt: u64) -> Self {
        ToyExtractor { dim, salt }
    }
}

impl FeatureExtractor for ToyExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, image: &[u8]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(math::fnv1a(self.salt, image));
        Ok((0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
    }
}

/// One extractor per [`Role`].
#[derive(Default)]
pub struct ExtractorSet {
    slots: [Option<Box<dyn FeatureExtractor>>; 3],
}

impl ExtractorSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Three toy extractors of `dim` each, salted per role.
    pub fn toy(dim: usize, seed: u64) -> Self {
        let mut set = Self::new();
        for role in Role::ALL {
            let salt = seed ^ (role.index() as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            set.register(role, Box::new(ToyExtractor::new(dim, salt)));
        }
        set
    }

    pub fn register(&mut self, role: Role, extractor: Box<dyn FeatureExtractor>) -> &mut Self {
        self.slots[role.index()] = Some(extractor);
        self
    }

    pub fn get(&self, role: Role) -> Result<&dyn FeatureExtractor> {
        self.slots[role.index()]
            .as_deref()
            .ok_or_else(|| Error::Config(format!("no {} extractor registered", role.as_str())))
    }

    /// Total dimension of the concatenated role vectors.
    pub fn feature_dim(&self) -> Result<usize> {
        Role::ALL.iter().map(|&r| self.get(r).map(|e| e.dim())).sum()
    }
}

/// Turns the concatenated role vectors into the clue that conditions generation.
pub trait ClueEncoder {
    fn encode_clue(&self, concatenated: &[f64]) -> Result<Vec<f64>>;
}

/// Passes the concatenation through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityClue;

impl ClueEncoder for IdentityClue {
    fn encode_clue(&self, concatenated: &[f64]) -> Result<Vec<f64>> {
        Ok(concatenated.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaintingFeatures {
    pub object: Vec<f64>,
    pub sentiment: Vec<f64>,
    pub scene: Vec<f64>,
    pub combined_clue: Vec<f64>,
}

impl PaintingFeatures {
    pub fn concatenated(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.object.len() + self.sentiment.len() + self.scene.len());
        out.extend_from_slice(&self.object);
        out.extend_from_slice(&self.sentiment);
        out.extend_from_slice(&self.scene);
        out
    }

    pub fn is_finite(&self) -> bool {
        [&self.object, &self.sentiment, &self.scene, &self.combined_clue]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Recomputes the clue with `encoder`, keeping the role vectors.
    pub fn with_clue(&self, encoder: &dyn ClueEncoder) -> Result<Self> {
        let mut out = self.clone();
        out.combined_clue = encoder.encode_clue(&self.concatenated())?;
        Ok(out)
    }
}

pub fn extract_features(
    image: &[u8],
    extractors: &ExtractorSet,
    clue: &dyn ClueEncoder,
) -> Result<PaintingFeatures> {
    let mut vectors: [Vec<f64>; 3] = Default::default();
    for role in Role::ALL {
        let extractor = extractors.get(role)?;
        let v = extractor.extract(image)?;
        if v.len() != extractor.dim() {
            return Err(Error::Dimension {
                token: role.as_str().to_string(),
                expected: extractor.dim(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} features", role.as_str())));
        }
        vectors[role.index()] = v;
    }
    let [object, sentiment, scene] = vectors;
    let mut features = PaintingFeatures {
        object,
        sentiment,
        scene,
        combined_clue: Vec::new(),
    };
    features.combined_clue = clue.encode_clue(&features.concatenated())?;
    if !features.is_finite() {
        return Err(Error::NonFinite("combined clue".into()));
    }
    Ok(features)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub clue_dim: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub max_len: usize,
    /// Stops sampling when drawn. `None` always samples `max_len` tokens.
    pub eos: Option<usize>,
    /// Tokens that receive zero probability.
    pub banned: Vec<usize>,
    pub init_bound: f64,
    pub seed: u64,
}

impl PolicyConfig {
    pub fn new(vocab_size: usize, feature_dim: usize) -> Self {
        PolicyConfig {
            vocab_size,
            feature_dim,
            clue_dim: 16,
            embedding_dim: 16,
            hidden_size: 32,
            max_len: 24,
            eos: Some(EOS),
            banned: vec![PAD, BOS],
            init_bound: INIT_BOUND,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("feature_dim", self.feature_dim),
            ("clue_dim", self.clue_dim),
            ("embedding_dim", self.embedding_dim),
            ("hidden_size", self.hidden_size),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(b) = self.banned.iter().find(|&&b| b >= self.vocab_size) {
            return Err(Error::Config(format!("banned token {b} outside vocabulary")));
        }
        if let Some(eos) = self.eos {
            if eos >= self.vocab_size || self.banned.contains(&eos) {
                return Err(Error::Config("eos token must be an allowed vocabulary id".into()));
            }
        }
        if (0..self.vocab_size).all(|t| self.banned.contains(&t)) {
            return Err(Error::Config("every token is banned".into()));
        }
        if !(self.init_bound.is_finite() && self.init_bound >= 0.0) {
            return Err(Error::Config("init_bound must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every parameter, in serialization order.
    pub fn manifest(&self) -> Vec<(&'static str, usize, usize)> {
        let (v, f, c, e, h) = (
            self.vocab_size,
            self.feature_dim,
            self.clue_dim,
            self.embedding_dim,
            self.hidden_size,
        );
        vec![
            ("clue.weight", c, f),
            ("clue.bias", 1, c),
            ("init.weight", h, c),
            ("init.bias", 1, h),
            ("embedding", v, e),
            ("start", 1, e),
            ("rnn.input", h, e),
            ("rnn.recurrent", h, h),
            ("rnn.bias", 1, h),
            ("output.weight", v, h),
            ("output.bias", 1, v),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub clue_w: Tensor,
    pub clue_b: Tensor,
    pub init_w: Tensor,
    pub init_b: Tensor,
    pub embedding: Tensor,
    pub start: Tensor,
    pub rnn_wx: Tensor,
    pub rnn_wh: Tensor,
    pub rnn_b: Tensor,
    pub output_w: Tensor,
    pub output_b: Tensor,
}

impl PolicyParams {
    pub fn from_tensors(config: &PolicyConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let manifest = config.manifest();
        if tensors.len() != manifest.len() {
            return Err(Error::Input(format!(
                "expected {} policy tensors, found {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), t) in manifest.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::Input(format!(
                    "{name}: expected {r}x{c}, found {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap_or_else(|| Tensor::zeros(0, 0));
        Ok(PolicyParams {
            clue_w: next(),
            clue_b: next(),
            init_w: next(),
            init_b: next(),
            embedding: next(),
            start: next(),
            rnn_wx: next(),
            rnn_wh: next(),
            rnn_b: next(),
            output_w: next(),
            output_b: next(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.clue_w,
            &self.clue_b,
            &self.init_w,
            &self.init_b,
            &self.embedding,
            &self.start,
            &self.rnn_wx,
            &self.rnn_wh,
            &self.rnn_b,
            &self.output_w,
            &self.output_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.clue_w,
            &mut self.clue_b,
            &mut self.init_w,
            &mut self.init_b,
            &mut self.embedding,
            &mut self.start,
            &mut self.rnn_wx,
            &mut self.rnn_wh,
            &mut self.rnn_b,
            &mut self.output_w,
            &mut self.output_b,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            math::axpy(alpha, b.data(), a.data_mut());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(factor));
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn bit_eq(&self, other: &PolicyParams) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }

    /// Flattened view of every parameter in manifest order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mutable access to the `index`-th scalar of [`PolicyParams::flatten`].
    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            let n = t.data().len();
            if index < n {
                return t.data_mut().get_mut(index);
            }
            index -= n;
        }
        None
    }
}

/// One sampled or scored poem: the chosen actions (a trailing EOS included
/// when it was drawn) and the log-probability of each.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

impl Rollout {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Actions with a trailing `eos` removed.
    pub fn poem(&self, eos: Option<usize>) -> &[usize] {
        match (eos, self.actions.last()) {
            (Some(e), Some(&last)) if e == last => &self.actions[..self.actions.len() - 1],
            _ => &self.actions,
        }
    }
}

struct Trace {
    features: Vec<f64>,
    clue: Vec<f64>,
    /// `states[0]` is the initial state; `states[t + 1]` follows action `t`.
    states: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// Elman RNN generator. The clue `tanh(W_c f + b_c)` of the concatenated
/// features initialises the state; each step emits a masked softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct PoemPolicy {
    config: PolicyConfig,
    params: PolicyParams,
}

impl PoemPolicy {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = config
            .manifest()
            .into_iter()
            .map(|(name, r, c)| {
                if name.ends_with("bias") {
                    Tensor::zeros(r, c)
                } else {
                    Tensor::uniform(r, c, config.init_bound, &mut rng)
                }
            })
            .collect();
        let params = PolicyParams::from_tensors(&config, tensors)?;
        Ok(PoemPolicy { config, params })
    }

    pub fn from_params(config: PolicyConfig, params: PolicyParams) -> Result<Self> {
        config.validate()?;
        let params = PolicyParams::from_tensors(&config, params.tensors().iter().map(|&t| t.clone()).collect())?;
        Ok(PoemPolicy { config, params })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    fn check_features(&self, concatenated: &[f64]) -> Result<()> {
        if concatenated.len() != self.config.feature_dim {
            return Err(Error::Dimension {
                token: "painting features".into(),
                expected: self.config.feature_dim,
                found: concatenated.len(),
            });
        }
        Ok(())
    }

    fn clue_of(&self, concatenated: &[f64]) -> Vec<f64> {
        let p = &self.params;
        p.clue_w.affine(concatenated, &p.clue_b).into_iter().map(math::tanh).collect()
    }

    fn initial_state(&self, clue: &[f64]) -> Vec<f64> {
        let p = &self.params;
        p.init_w.affine(clue, &p.init_b).into_iter().map(math::tanh).collect()
    }

    fn input_row(&self, prev: Option<usize>) -> &[f64] {
        match prev {
            None => self.params.start.data(),
            Some(a) => self.params.embedding.row(a),
        }
    }

    fn advance(&self, prev: Option<usize>, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let mut pre = p.rnn_wx.affine(self.input_row(prev), &p.rnn_b);
        math::axpy(1.0, &p.rnn_wh.matvec(h), &mut pre);
        let h_new: Vec<f64> = pre.into_iter().map(math::tanh).collect();
        let mut logits = p.output_w.affine(&h_new, &p.output_b);
        for &b in &self.config.banned {
            logits[b] = f64::NEG_INFINITY;
        }
        let probs = math::softmax(&logits);
        (h_new, probs)
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "poem of {} tokens exceeds max_len {}",
                actions.len(),
                self.config.max_len
            )));
        }
        for (t, &a) in actions.iter().enumerate() {
            if a >= self.config.vocab_size || self.config.banned.contains(&a) {
                return Err(Error::Input(format!("token {a} at step {t} cannot be generated")));
            }
            if Some(a) == self.config.eos && t + 1 != actions.len() {
                return Err(Error::Input(format!("eos before the end of the poem at step {t}")));
            }
        }
        Ok(())
    }

    fn trace(&self, features: &PaintingFeatures, actions: &[usize]) -> Result<Trace> {
        let concatenated = features.concatenated();
        self.check_features(&concatenated)?;
        self.check_actions(actions)?;
        let clue = self.clue_of(&concatenated);
        let mut states = vec![self.initial_state(&clue)];
        let mut probs = Vec::with_capacity(actions.len());
        let mut prev = None;
        for &a in actions {
            let (h, p) = self.advance(prev, states.last().map_or(&[][..], Vec::as_slice));
            states.push(h);
            probs.push(p);
            prev = Some(a);
        }
        Ok(Trace {
            features: concatenated,
            clue,
            states,
            probs,
        })
    }

    /// Next-token distribution before each action of `actions`.
    pub fn step_distributions(&self, features: &PaintingFeatures, actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.trace(features, actions)?.probs)
    }

    pub fn log_prob(&self, features: &PaintingFeatures, actions: &[usize]) -> Result<f64> {
        let trace = self.trace(features, actions)?;
        Ok(actions.iter().zip(&trace.probs).map(|(&a, p)| math::ln(p[a])).sum())
    }

    /// Adds `scale * d log pi(actions) / d theta` into `grads` and returns the log-probability.
    pub fn accumulate_log_prob_gradient(
        &self,
        features: &PaintingFeatures,
        actions: &[usize],
        scale: f64,
        grads: &mut PolicyParams,
    ) -> Result<f64> {
        let trace = self.trace(features, actions)?;
        let p = &self.params;
        let hidden = self.config.hidden_size;
        let mut log_prob = 0.0;
        let mut dh_next = vec![0.0; hidden];
        for t in (0..actions.len()).rev() {
            let a = actions[t];
            log_prob += math::ln(trace.probs[t][a]);
            let mut dlogits: Vec<f64> = trace.probs[t].iter().map(|&q| -scale * q).collect();
            dlogits[a] += scale;
            let h = &trace.states[t + 1];
            grads.output_w.outer_acc(&dlogits, h);
            math::axpy(1.0, &dlogits, grads.output_b.data_mut());
            let mut dh = dh_next;
            p.output_w.matvec_t_acc(&dlogits, &mut dh);
            let dpre: Vec<f64> = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
            math::axpy(1.0, &dpre, grads.rnn_b.data_mut());
            let prev = if t == 0 { None } else { Some(actions[t - 1]) };
            grads.rnn_wx.outer_acc(&dpre, self.input_row(prev));
            grads.rnn_wh.outer_acc(&dpre, &trace.states[t]);
            let dx = p.rnn_wx.matvec_t(&dpre);
            match prev {
                None => math::axpy(1.0, &dx, grads.start.data_mut()),
                Some(prev) => math::axpy(1.0, &dx, grads.embedding.row_mut(prev)),
            }
            dh_next = p.rnn_wh.matvec_t(&dpre);
        }
        let h0 = &trace.states[0];
        let dpre0: Vec<f64> = dh_next.iter().zip(h0).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
        grads.init_w.outer_acc(&dpre0, &trace.clue);
        math::axpy(1.0, &dpre0, grads.init_b.data_mut());
        let dclue = p.init_w.matvec_t(&dpre0);
        let dcpre: Vec<f64> = dclue.iter().zip(&trace.clue).map(|(d, c)| d * (1.0 - c * c)).collect();
        grads.clue_w.outer_acc(&dcpre, &trace.features);
        math::axpy(1.0, &dcpre, grads.clue_b.data_mut());
        Ok(log_prob)
    }

    /// Ancestral sampling until EOS or `max_len` tokens.
    pub fn sample<R: Rng + ?Sized>(&self, features: &PaintingFeatures, rng: &mut R) -> Result<Rollout> {
        let concatenated = features.concatenated();
        self.check_features(&concatenated)?;
        let mut h = self.initial_state(&self.clue_of(&concatenated));
        let mut prev = None;
        let mut rollout = Rollout {
            actions: Vec::new(),
            log_probs: Vec::new(),
        };
        for _ in 0..self.config.max_len {
            let (h_new, probs) = self.advance(prev, &h);
            h = h_new;
            let a = draw(&probs, rng.gen::<f64>());
            rollout.actions.push(a);
            rollout.log_probs.push(math::ln(probs[a]));
            if Some(a) == self.config.eos {
                break;
            }
            prev = Some(a);
        }
        Ok(rollout)
    }
}

impl ClueEncoder for PoemPolicy {
    fn encode_clue(&self, concatenated: &[f64]) -> Result<Vec<f64>> {
        self.check_features(concatenated)?;
        Ok(self.clue_of(concatenated))
    }
}

/// Inverse-CDF draw; falls back to the last token with positive mass.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if p > 0.0 && u < cumulative {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn sample_poem(features: &PaintingFeatures, policy: &PoemPolicy, seed: u64) -> Result<Rollout> {
    policy.sample(features, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Bag-of-words poem encoding: token frequencies divided by poem length.
pub fn poem_encoding(poem: &[usize], vocab_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; vocab_size];
    let n = poem.iter().filter(|&&t| t < vocab_size).count();
    if n == 0 {
        return out;
    }
    for &t in poem.iter().filter(|&&t| t < vocab_size) {
        out[t] += 1.0;
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub trait RelevanceScorer {
    /// Probability in [0, 1] that `poem` describes the painting.
    fn relevance(&self, poem: &[usize], features: &PaintingFeatures) -> f64;
}

pub trait PoeticnessScorer {
    /// Probability in [0, 1] that `poem` is a real poem.
    fn poeticness(&self, poem: &[usize]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantScorer(pub f64);

impl RelevanceScorer for ConstantScorer {
    fn relevance(&self, _: &[usize], _: &PaintingFeatures) -> f64 {
        self.0
    }
}

impl PoeticnessScorer for ConstantScorer {
    fn poeticness(&self, _: &[usize]) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardPair {
    pub relevance: f64,
    pub poeticness: f64,
    pub combined: f64,
}

/// `combined = lambda * relevance + (1 - lambda) * poeticness`.
pub fn reward(
    poem: &[usize],
    features: &PaintingFeatures,
    relevance: &dyn RelevanceScorer,
    poeticness: &dyn PoeticnessScorer,
    lambda: f64,
) -> Result<RewardPair> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let r = relevance.relevance(poem, features);
    let p = poeticness.poeticness(poem);
    for (name, v) in [("relevance", r), ("poeticness", p)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!("{name} score {v} outside [0, 1]")));
        }
    }
    Ok(RewardPair {
        relevance: r,
        poeticness: p,
        combined: lambda * r + (1.0 - lambda) * p,
    })
}

/// Logistic classifier over the bilinear form `e(poem)^T W clue`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceDiscriminator {
    pub weight: Tensor,
    pub bias: f64,
}

impl RelevanceDiscriminator {
    fn logit(&self, poem: &[usize], clue: &[f64]) -> f64 {
        let e = poem_encoding(poem, self.weight.rows());
        if clue.len() != self.weight.cols() {
            return self.bias;
        }
        math::dot(&e, &self.weight.matvec(clue)) + self.bias
    }
}

impl RelevanceScorer for RelevanceDiscriminator {
    fn relevance(&self, poem: &[usize], features: &PaintingFeatures) -> f64 {
        math::sigmoid(self.logit(poem, &features.combined_clue))
    }
}

/// Logistic classifier over the poem encoding alone.
#[derive(Clone, Debug, PartialEq)]
pub struct PoeticnessDiscriminator {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl PoeticnessScorer for PoeticnessDiscriminator {
    fn poeticness(&self, poem: &[usize]) -> f64 {
        let e = poem_encoding(poem, self.weight.len());
        math::sigmoid(math::dot(&e, &self.weight) + self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            epochs: 300,
            learning_rate: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminators {
    pub relevance: RelevanceDiscriminator,
    pub poeticness: PoeticnessDiscriminator,
}

/// Full-batch gradient descent on the mean logistic loss from zero weights.
fn fit_logistic(xs: &[Vec<f64>], ys: &[f64], config: DiscriminatorConfig) -> (Vec<f64>, f64) {
    let dim = xs.first().map_or(0, Vec::len);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let inv = 1.0 / xs.len().max(1) as f64;
    for _ in 0..config.epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let err = math::sigmoid(math::dot(&w, x) + b) - y;
            math::axpy(err, x, &mut gw);
            gb += err;
        }
        math::axpy(-config.learning_rate * inv, &gw, &mut w);
        b -= config.learning_rate * inv * gb;
    }
    (w, b)
}

fn bilinear_input(poem: &[usize], clue: &[f64], vocab_size: usize) -> Vec<f64> {
    let mut t = Tensor::zeros(vocab_size, clue.len());
    t.outer_acc(&poem_encoding(poem, vocab_size), clue);
    t.data().to_vec()
}

pub fn train_poeticness(
    real: &[&[usize]],
    generated: &[&[usize]],
    vocab_size: usize,
    config: DiscriminatorConfig,
) -> Result<PoeticnessDiscriminator> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Input("poeticness training needs real and generated poems".into()));
    }
    let xs: Vec<Vec<f64>> = real
        .iter()
        .chain(generated)
        .map(|p| poem_encoding(p, vocab_size))
        .collect();
    let ys: Vec<f64> = real.iter().map(|_| 1.0).chain(generated.iter().map(|_| 0.0)).collect();
    let (weight, bias) = fit_logistic(&xs, &ys, config);
    Ok(PoeticnessDiscriminator { weight, bias })
}

/// Positives are each poem with its own painting; negatives pair each poem
/// with the next painting in the list.
pub fn train_relevance(
    real: &[(&[usize], &PaintingFeatures)],
    vocab_size: usize,
    config: DiscriminatorConfig,
) -> Result<RelevanceDiscriminator> {
    if real.len() < 2 {
        return Err(Error::Input("relevance training needs at least two paintings".into()));
    }
    let clue_dim = real[0].1.combined_clue.len();
    if real.iter().any(|(_, f)| f.combined_clue.len() != clue_dim) {
        return Err(Error::Input("paintings have differing clue dimensions".into()));
    }
    let n = real.len();
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(2 * n);
    for (i, (poem, features)) in real.iter().enumerate() {
        xs.push(bilinear_input(poem, &features.combined_clue, vocab_size));
        ys.push(1.0);
        let other = real[(i + 1) % n].1;
        xs.push(bilinear_input(poem, &other.combined_clue, vocab_size));
        ys.push(0.0);
    }
    let (w, bias) = fit_logistic(&xs, &ys, config);
    let weight = Tensor::from_vec(vocab_size, clue_dim, w)
        .ok_or_else(|| Error::Contract("relevance weight shape".into()))?;
    Ok(RelevanceDiscriminator { weight, bias })
}

pub fn train_discriminators(
    real: &[(Vec<usize>, PaintingFeatures)],
    generated: &[Vec<usize>],
    vocab_size: usize,
    config: DiscriminatorConfig,
) -> Result<Discriminators> {
    let real_poems: Vec<&[usize]> = real.iter().map(|(p, _)| p.as_slice()).collect();
    let generated: Vec<&[usize]> = generated.iter().map(Vec::as_slice).collect();
    let poeticness = train_poeticness(&real_poems, &generated, vocab_size, config)?;
    let pairs: Vec<(&[usize], &PaintingFeatures)> = real.iter().map(|(p, f)| (p.as_slice(), f)).collect();
    let relevance = train_relevance(&pairs, vocab_size, config)?;
    Ok(Discriminators { relevance, poeticness })
}

/// Scored poem fed to [`policy_gradient_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub features: PaintingFeatures,
    pub actions: Vec<usize>,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    /// Mean reward of the batch.
    BatchMean,
    /// Mean reward of the other episodes in the batch.
    LeaveOneOut,
    Fixed(f64),
}

pub fn advantages(rewards: &[f64], baseline: Baseline) -> Vec<f64> {
    let n = rewards.len();
    let all_equal = rewards.windows(2).all(|w| w[0].to_bits() == w[1].to_bits());
    let sum: f64 = rewards.iter().sum();
    rewards
        .iter()
        .map(|&r| {
            let b = match baseline {
                Baseline::Fixed(b) => b,
                _ if all_equal => r,
                Baseline::BatchMean => sum / n as f64,
                Baseline::LeaveOneOut if n > 1 => (sum - r) / (n - 1) as f64,
                Baseline::LeaveOneOut => 0.0,
            };
            r - b
        })
        .collect()
}

/// `mean_b (R_b - baseline_b) * grad log pi(actions_b)`.
pub fn reinforce_gradient(policy: &PoemPolicy, batch: &[Episode], baseline: Baseline) -> Result<PolicyParams> {
    let mut grads = policy.params().zeros_like();
    if batch.is_empty() {
        return Ok(grads);
    }
    let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
    let inv = 1.0 / batch.len() as f64;
    for (episode, adv) in batch.iter().zip(advantages(&rewards, baseline)) {
        if adv != 0.0 {
            policy.accumulate_log_prob_gradient(&episode.features, &episode.actions, adv * inv, &mut grads)?;
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgReport {
    pub mean_reward: f64,
    pub grad_norm: f64,
    pub updated: bool,
}

/// One REINFORCE ascent step `theta += lr * g`. A batch whose advantages
/// are all zero leaves the parameters untouched.
pub fn policy_gradient_step(
    policy: &mut PoemPolicy,
    batch: &[Episode],
    baseline: Baseline,
    learning_rate: f64,
) -> Result<PgReport> {
    if batch.iter().any(|e| !e.reward.is_finite()) {
        return Err(Error::NonFinite("episode reward".into()));
    }
    let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
    let mean_reward = if batch.is_empty() {
        0.0
    } else {
        rewards.iter().sum::<f64>() / batch.len() as f64
    };
    if advantages(&rewards, baseline).iter().all(|&a| a == 0.0) {
        return Ok(PgReport {
            mean_reward,
            grad_norm: 0.0,
            updated: false,
        });
    }
    let grads = reinforce_gradient(policy, batch, baseline)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    policy.params_mut().axpy(learning_rate, &grads);
    Ok(PgReport {
        mean_reward,
        grad_norm: math::sqrt(grads.sum_squares()),
        updated: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoemExample {
    pub features: PaintingFeatures,
    /// Poem tokens without a terminating EOS.
    pub poem: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoemTrainingConfig {
    pub mle_epochs: usize,
    pub adversarial_rounds: usize,
    pub samples_per_painting: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub baseline: Baseline,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
}

impl Default for PoemTrainingConfig {
    fn default() -> Self {
        PoemTrainingConfig {
            mle_epochs: 200,
            adversarial_rounds: 10,
            samples_per_painting: 4,
            learning_rate: 0.5,
            lambda: DEFAULT_LAMBDA,
            baseline: Baseline::BatchMean,
            discriminator: DiscriminatorConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub mean_reward: f64,
    pub mean_relevance: f64,
    pub mean_poeticness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoemTrainingReport {
    /// Mean per-poem log-likelihood of the gold poems after each MLE epoch.
    pub mle_log_likelihood: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub discriminators: Option<Discriminators>,
}

/// Gold actions: the poem truncated to fit, followed by EOS when configured.
pub fn gold_actions(poem: &[usize], config: &PolicyConfig) -> Vec<usize> {
    let room = config.max_len - usize::from(config.eos.is_some());
    let mut actions: Vec<usize> = poem.iter().copied().take(room).collect();
    actions.extend(config.eos);
    actions
}

/// Maximum-likelihood warm-up, written as REINFORCE with reward 1 and
/// baseline 0, then alternating discriminator fits and policy updates.
pub fn train_poem_policy(
    policy: &mut PoemPolicy,
    examples: &[PoemExample],
    config: &PoemTrainingConfig,
) -> Result<PoemTrainingReport> {
    if examples.is_empty() {
        return Err(Error::Input("no poem examples".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    let gold: Vec<Vec<usize>> = examples.iter().map(|e| gold_actions(&e.poem, policy.config())).collect();
    let mut report = PoemTrainingReport {
        mle_log_likelihood: Vec::with_capacity(config.mle_epochs),
        rounds: Vec::new(),
        discriminators: None,
    };
    let mle_batch: Vec<Episode> = examples
        .iter()
        .zip(&gold)
        .map(|(e, actions)| Episode {
            features: e.features.clone(),
            actions: actions.clone(),
            reward: 1.0,
        })
        .collect();
    for _ in 0..config.mle_epochs {
        policy_gradient_step(policy, &mle_batch, Baseline::Fixed(0.0), config.learning_rate)?;
        let mut total = 0.0;
        for e in &mle_batch {
            total += policy.log_prob(&e.features, &e.actions)?;
        }
        report.mle_log_likelihood.push(total / mle_batch.len() as f64);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eos = policy.config().eos;
    for round in 1..=config.adversarial_rounds {
        let current: Vec<PaintingFeatures> = examples
            .iter()
            .map(|e| e.features.with_clue(&*policy))
            .collect::<Result<_>>()?;
        let mut samples = Vec::new();
        for features in &current {
            for _ in 0..config.samples_per_painting.max(1) {
                samples.push((features, policy.sample(features, &mut rng)?));
            }
        }
        let real: Vec<(Vec<usize>, PaintingFeatures)> =
            examples.iter().zip(&current).map(|(e, f)| (e.poem.clone(), f.clone())).collect();
        let generated: Vec<Vec<usize>> = samples.iter().map(|(_, r)| r.poem(eos).to_vec()).collect();
        let discriminators = train_discriminators(&real, &generated, policy.config().vocab_size, config.discriminator)?;
        let mut batch = Vec::with_capacity(samples.len());
        let (mut rel, mut poe) = (0.0, 0.0);
        for (features, rollout) in &samples {
            let r = reward(
                rollout.poem(eos),
                features,
                &discriminators.relevance,
                &discriminators.poeticness,
                config.lambda,
            )?;
            rel += r.relevance;
            poe += r.poeticness;
            batch.push(Episode {
                features: (*features).clone(),
                actions: rollout.actions.clone(),
                reward: r.combined,
            });
        }
        let step = policy_gradient_step(policy, &batch, config.baseline, config.learning_rate)?;
        let n = batch.len() as f64;
        report.rounds.push(RoundRecord {
            round,
            mean_reward: step.mean_reward,
            mean_relevance: rel / n,
            mean_poeticness: poe / n,
        });
        report.discriminators = Some(discriminators);
    }
    Ok(report)
}

/// Vocabulary over poem lines plus the [`NEWLINE_TOKEN`] separator.
pub fn poem_vocabulary(poems: &[Vec<String>], min_count: usize, max_size: usize) -> Result<Vocabulary> {
    let lines: Vec<Vec<String>> = poems.iter().flatten().map(|l| tokenize(l)).collect();
    let mut vocab = Vocabulary::build_from_sequences(lines.iter().map(Vec::as_slice), min_count, max_size.saturating_sub(1))?;
    vocab.push(NEWLINE_TOKEN);
    Ok(vocab)
}

/// Token ids of a poem with [`NEWLINE_TOKEN`] between lines.
pub fn encode_poem<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.extend(vocab.id(NEWLINE_TOKEN));
        }
        out.extend(vocab.encode(&tokenize(line.as_ref()), false, false));
    }
    out
}

/// Splits generated ids into text lines at [`NEWLINE_TOKEN`]; EOS and empty lines are dropped.
pub fn poem_lines(tokens: &[usize], vocab: &Vocabulary) -> Vec<String> {
    let mut lines = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for &t in tokens {
        let tok = vocab.token(t).unwrap_or(crate::corpus::UNK_TOKEN);
        if tok == NEWLINE_TOKEN {
            if !current.is_empty() {
                lines.push(current.join(" "));
            }
            current.clear();
        } else if t != EOS {
            current.push(tok);
        }
    }
    if !current.is_empty() {
        lines.push(current.join(" "));
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(seed: u64) -> PaintingFeatures {
        extract_features(&seed.to_le_bytes(), &ExtractorSet::toy(3, 9), &IdentityClue).unwrap()
    }

    fn small_policy(eos: Option<usize>) -> PoemPolicy {
        let mut cfg = PolicyConfig::new(8, 9);
        cfg.clue_dim = 4;
        cfg.embedding_dim = 3;
        cfg.hidden_size = 5;
        cfg.max_len = 6;
        cfg.eos = eos;
        cfg.init_bound = 0.7;
        PoemPolicy::new(cfg).unwrap()
    }

    #[test]
    fn toy_extractor_is_deterministic_and_image_sensitive() {
        let set = ExtractorSet::toy(4, 1);
        let a = extract_features(b"image-a", &set, &IdentityClue).unwrap();
        assert_eq!(a, extract_features(b"image-a", &set, &IdentityClue).unwrap());
        assert_ne!(a, extract_features(b"image-b", &set, &IdentityClue).unwrap());
        assert_eq!(a.combined_clue.len(), 12);
        assert_ne!(a.object, a.scene);
    }

    #[test]
    fn missing_extractor_is_a_config_error() {
        let mut set = ExtractorSet::new();
        set.register(Role::Object, Box::new(ToyExtractor::new(2, 0)));
        assert!(matches!(extract_features(b"x", &set, &IdentityClue), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let policy = small_policy(Some(EOS));
        let f = features(3);
        for seed in 0..50 {
            let a = sample_poem(&f, &policy, seed).unwrap();
            assert_eq!(a, sample_poem(&f, &policy, seed).unwrap());
            assert!(a.actions.len() <= policy.config().max_len);
            assert!(!a.actions.iter().any(|t| [PAD, BOS].contains(t)));
            let lp = policy.log_prob(&f, &a.actions).unwrap();
            assert!((a.total_log_prob() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn step_distributions_normalize() {
        let policy = small_policy(None);
        let f = features(1);
        let r = sample_poem(&f, &policy, 5).unwrap();
        for p in policy.step_distributions(&f, &r.actions).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p[PAD], 0.0);
        }
    }

    #[test]
    fn reward_combination() {
        let f = features(0);
        let r = reward(&[4], &f, &ConstantScorer(0.8), &ConstantScorer(0.4), 0.5).unwrap();
        assert!((r.combined - 0.6).abs() < 1e-15);
        let r = reward(&[4], &f, &ConstantScorer(0.8), &ConstantScorer(0.4), 1.0).unwrap();
        assert_eq!(r.combined, 0.8);
        assert!(reward(&[4], &f, &ConstantScorer(0.8), &ConstantScorer(0.4), 1.5).is_err());
    }

    #[test]
    fn equal_rewards_leave_parameters_unchanged() {
        let mut policy = small_policy(Some(EOS));
        let before = policy.params().clone();
        let f = features(2);
        let batch: Vec<Episode> = (0..3)
            .map(|s| Episode {
                features: f.clone(),
                actions: sample_poem(&f, &policy, s).unwrap().actions,
                reward: 0.1,
            })
            .collect();
        let report = policy_gradient_step(&mut policy, &batch, Baseline::BatchMean, 1.0).unwrap();
        assert!(!report.updated);
        assert!(policy.params().bit_eq(&before));
    }

    #[test]
    fn empty_class_is_an_input_error() {
        let real = vec![(vec![4, 5], features(0))];
        assert!(matches!(
            train_discriminators(&real, &[], 8, DiscriminatorConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn poem_line_round_trip() {
        let poems = vec![vec!["The sea is calm".to_string(), "stars above".to_string()]];
        let vocab = poem_vocabulary(&poems, 1, 100).unwrap();
        let ids = encode_poem(&poems[0], &vocab);
        assert_eq!(poem_lines(&ids, &vocab), vec!["the sea is calm", "stars above"]);
    }
}
