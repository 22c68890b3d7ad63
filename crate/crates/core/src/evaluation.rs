//! BLEU scoring, BLEU binned by source length, and Likert aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub const MAX_ORDER: usize = 4;
pub const DEFAULT_BIN_WIDTH: usize = 5;

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, hypothesis n-gram count)` for order `n`.
fn clipped_matches<T: Ord>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let matches = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else {
        math::exp(1.0 - ref_len as f64 / hyp_len as f64)
    }
}

/// Sentence-level BLEU-4 on a 0-100 scale. Unigram precision is unsmoothed;
/// orders 2..4 use add-one smoothing so short hypotheses still score.
pub fn sentence_bleu<T: Ord>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Input("empty reference".into()));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 1..=MAX_ORDER {
        let (m, c) = clipped_matches(hypothesis, reference, n);
        let p = if n == 1 {
            m as f64 / c as f64
        } else {
            (m as f64 + 1.0) / (c as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_precision += math::ln(p) / MAX_ORDER as f64;
    }
    let bleu = 100.0 * brevity_penalty(hypothesis.len(), reference.len()) * math::exp(log_precision);
    Ok(bleu.clamp(0.0, 100.0))
}

/// Standard unsmoothed corpus BLEU-4 (n-gram statistics pooled over all pairs).
pub fn corpus_bleu<T: Ord, H: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(H, R)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("no sentence pairs".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in pairs {
        let (h, r) = (h.as_ref(), r.as_ref());
        if r.is_empty() {
            return Err(Error::Input("empty reference".into()));
        }
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let (m, c) = clipped_matches(h, r, n);
            matches[n - 1] += m;
            totals[n - 1] += c;
        }
    }
    if hyp_len == 0 || matches.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..MAX_ORDER)
        .map(|i| math::ln(matches[i] as f64 / totals[i] as f64))
        .sum::<f64>()
        / MAX_ORDER as f64;
    Ok(100.0 * brevity_penalty(hyp_len, ref_len) * math::exp(log_p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub sentence_scores: Vec<f64>,
    /// Arithmetic mean of `sentence_scores`.
    pub average_target_bleu: f64,
    /// Pooled corpus BLEU over the same pairs, reported alongside.
    pub corpus_bleu: f64,
}

pub fn corpus_report<T: Ord, H: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(H, R)]) -> Result<BleuReport> {
    if pairs.is_empty() {
        return Err(Error::Input("no sentence pairs".into()));
    }
    let sentence_scores = pairs
        .iter()
        .map(|(h, r)| sentence_bleu(h.as_ref(), r.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let average_target_bleu = sentence_scores.iter().sum::<f64>() / sentence_scores.len() as f64;
    Ok(BleuReport {
        sentence_scores,
        average_target_bleu,
        corpus_bleu: corpus_bleu(pairs)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthBin {
    pub low: usize,
    pub high: usize,
    pub count: usize,
    pub mean_bleu: f64,
}

impl LengthBin {
    pub fn midpoint(&self) -> f64 {
        (self.low + self.high) as f64 / 2.0
    }
}

/// Populated bins in ascending order of source length.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBinnedReport {
    pub bin_width: usize,
    pub bins: Vec<LengthBin>,
}

impl LengthBinnedReport {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Groups `(source length, sentence BLEU)` results into bins
/// `[1..w], [w+1..2w], ...` and averages each bin.
pub fn bleu_by_length(results: &[(usize, f64)], bin_width: usize) -> Result<LengthBinnedReport> {
    if bin_width == 0 {
        return Err(Error::Parameter("bin width must be at least 1".into()));
    }
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(len, score) in results {
        let bin = len.saturating_sub(1) / bin_width;
        let e = acc.entry(bin).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += score;
    }
    let bins = acc
        .into_iter()
        .map(|(b, (count, sum))| LengthBin {
            low: b * bin_width + 1,
            high: (b + 1) * bin_width,
            count,
            mean_bleu: sum / count as f64,
        })
        .collect();
    Ok(LengthBinnedReport { bin_width, bins })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / math::sqrt(vx * vy))
}

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LikertRecord {
    pub painting_id: alloc::string::String,
    pub rater_id: alloc::string::String,
    pub content: u8,
    pub creativity: u8,
    pub style: u8,
}

impl LikertRecord {
    pub fn new(
        painting_id: impl Into<alloc::string::String>,
        rater_id: impl Into<alloc::string::String>,
        content: u8,
        creativity: u8,
        style: u8,
    ) -> Result<Self> {
        for (name, v) in [("content", content), ("creativity", creativity), ("style", style)] {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&v) {
                return Err(Error::Validation(format!("{name} score {v} outside 1..=5")));
            }
        }
        Ok(LikertRecord {
            painting_id: painting_id.into(),
            rater_id: rater_id.into(),
            content,
            creativity,
            style,
        })
    }
}

/// Per-dimension means at full precision; `rounded` gives the one-decimal
/// reporting values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikertSummary {
    pub count: usize,
    pub content: f64,
    pub creativity: f64,
    pub style: f64,
}

pub fn round_to_tenth(x: f64) -> f64 {
    math::round(x * 10.0) / 10.0
}

impl LikertSummary {
    pub fn rounded(&self) -> (f64, f64, f64) {
        (
            round_to_tenth(self.content),
            round_to_tenth(self.creativity),
            round_to_tenth(self.style),
        )
    }
}

/// Means computed from integer sums, so the only rounding is the final division.
pub fn likert_summary(records: &[LikertRecord]) -> Result<LikertSummary> {
    if records.is_empty() {
        return Err(Error::Input("no Likert records".into()));
    }
    let (mut c, mut cr, mut s) = (0u64, 0u64, 0u64);
    for r in records {
        c += u64::from(r.content);
        cr += u64::from(r.creativity);
        s += u64::from(r.style);
    }
    let n = records.len() as f64;
    Ok(LikertSummary {
        count: records.len(),
        content: c as f64 / n,
        creativity: cr as f64 / n,
        style: s as f64 / n,
    })
}

/// Per-painting mean ratings, as published in aggregate form.
#[derive(Clone, Debug, PartialEq)]
pub struct PaintingAverages {
    pub painting_id: alloc::string::String,
    pub content: f64,
    pub creativity: f64,
    pub style: f64,
}

/// Mean of per-painting averages across paintings.
pub fn summarize_averages(rows: &[PaintingAverages]) -> Result<LikertSummary> {
    if rows.is_empty() {
        return Err(Error::Input("no painting averages".into()));
    }
    let lo = f64::from(LIKERT_MIN);
    let hi = f64::from(LIKERT_MAX);
    for r in rows {
        for v in [r.content, r.creativity, r.style] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Validation(format!(
                    "average {v} for `{}` outside 1..=5",
                    r.painting_id
                )));
            }
        }
    }
    let n = rows.len() as f64;
    Ok(LikertSummary {
        count: rows.len(),
        content: rows.iter().map(|r| r.content).sum::<f64>() / n,
        creativity: rows.iter().map(|r| r.creativity).sum::<f64>() / n,
        style: rows.iter().map(|r| r.style).sum::<f64>() / n,
    })
}
