//! Pretrained word vectors and lexicon retrofitting.
//!
//! Retrofitting pulls each vector towards its lexicon neighbours while
//! keeping it close to its pretrained position. It minimizes
//!
//! ```text
//! J(Q) = sum_i alpha * |q_i - x_i|^2 + sum_{(i,j) in E} beta * |q_i - q_j|^2
//! ```
//!
//! where `E` holds each undirected lexicon edge once. A sweep visits words in
//! vocabulary id order and sets each `q_i` to its exact coordinate minimizer
//! `(alpha * x_i + beta * sum_{j in N(i)} q_j) / (alpha + beta * |N(i)|)`,
//! using already-updated neighbours, so `J` never increases.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Lexicon, Vocabulary, PAD, RESERVED};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_DIM: usize = 192;
pub const INIT_BOUND: f64 = 0.1;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_ITERS: usize = 10;

/// One row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Tensor,
    vocab_fingerprint: u64,
}

impl EmbeddingMatrix {
    /// Seeded uniform rows in `[-0.1, 0.1]` with a zero PAD row.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = Tensor::uniform(vocab.len(), dim, INIT_BOUND, &mut rng);
        if vocab.len() > PAD {
            matrix.row_mut(PAD).fill(0.0);
        }
        EmbeddingMatrix {
            matrix,
            vocab_fingerprint: vocab.fingerprint(),
        }
    }

    /// Copies pretrained vectors for non-reserved vocabulary tokens found in
    /// `entries`; everything else keeps the seeded initialization.
    pub fn from_pretrained<I, S>(vocab: &Vocabulary, dim: usize, entries: I, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut emb = Self::random(vocab, dim, seed);
        for (token, values) in entries {
            let token = token.as_ref();
            if values.len() != dim {
                return Err(Error::Dimension {
                    token: token.into(),
                    expected: dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("non-finite vector component for `{token}`")));
            }
            if RESERVED.contains(&token) {
                continue;
            }
            if let Some(id) = vocab.id(token) {
                emb.matrix.row_mut(id).copy_from_slice(&values);
            }
        }
        Ok(emb)
    }

    pub fn from_tensor(matrix: Tensor, vocab: &Vocabulary) -> Result<Self> {
        if matrix.rows() != vocab.len() {
            return Err(Error::Input(format!(
                "embedding has {} rows but vocabulary has {} tokens",
                matrix.rows(),
                vocab.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::Input("embedding contains non-finite entries".into()));
        }
        Ok(EmbeddingMatrix {
            matrix,
            vocab_fingerprint: vocab.fingerprint(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_tensor(self) -> Tensor {
        self.matrix
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.vocab_fingerprint
    }
}

/// Symmetrized lexicon restricted to in-vocabulary words, without self loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconGraph {
    neighbors: Vec<Vec<usize>>,
}

impl LexiconGraph {
    pub fn new(vocab: &Vocabulary, lexicon: &Lexicon) -> Self {
        let mut neighbors = vec![Vec::new(); vocab.len()];
        for (a, b) in lexicon.pairs() {
            let (Some(i), Some(j)) = (vocab.id(a), vocab.id(b)) else {
                continue;
            };
            if i == j {
                continue;
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        LexiconGraph { neighbors }
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[id]
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn is_isolated(&self, id: usize) -> bool {
        self.neighbors[id].is_empty()
    }
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!(
            "retrofit weights must be positive, got alpha={alpha} beta={beta}"
        )));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn retrofit_objective(original: &Tensor, current: &Tensor, graph: &LexiconGraph, alpha: f64, beta: f64) -> f64 {
    let anchor: f64 = (0..original.rows())
        .map(|i| squared_distance(current.row(i), original.row(i)))
        .sum();
    let smooth: f64 = graph
        .edges()
        .map(|(i, j)| squared_distance(current.row(i), current.row(j)))
        .sum();
    alpha * anchor + beta * smooth
}

/// One in-place coordinate sweep in vocabulary id order.
pub fn retrofit_sweep(original: &Tensor, current: &mut Tensor, graph: &LexiconGraph, alpha: f64, beta: f64) {
    let dim = current.cols();
    let mut acc = vec![0.0; dim];
    for i in 0..current.rows() {
        let ns = graph.neighbors(i);
        if ns.is_empty() {
            continue;
        }
        acc.copy_from_slice(original.row(i));
        acc.iter_mut().for_each(|v| *v *= alpha);
        for &j in ns {
            for (a, q) in acc.iter_mut().zip(current.row(j)) {
                *a += beta * q;
            }
        }
        let denom = alpha + beta * ns.len() as f64;
        for (q, a) in current.row_mut(i).iter_mut().zip(&acc) {
            *q = a / denom;
        }
    }
}

pub fn retrofit(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    alpha: f64,
    beta: f64,
    iters: usize,
) -> Result<EmbeddingMatrix> {
    check_weights(alpha, beta)?;
    if vocab.len() != emb.rows() {
        return Err(Error::Input("vocabulary does not match embedding rows".into()));
    }
    let graph = LexiconGraph::new(vocab, lexicon);
    let mut current = emb.matrix.clone();
    for _ in 0..iters {
        retrofit_sweep(&emb.matrix, &mut current, &graph, alpha, beta);
    }
    Ok(EmbeddingMatrix {
        matrix: current,
        vocab_fingerprint: emb.vocab_fingerprint,
    })
}
