//! Transition-level and surface metrics of generated sequences against the
//! oracle chain.
//!
//! All transition metrics are functions of the pooled bigram counts
//! `c(i, j)` over `M = N (T - 1)` transitions, with `pi_hat(i) = n_i / M`
//! and `p_hat(j|i) = c(i, j) / n_i`. The weights `pi_hat(i) p_hat(j|i)`
//! collapse to `c(i, j) / M`, which is how every sum below is evaluated.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{OracleChain, TransitionKernel};
use crate::posterior::MASK;

/// Largest tolerated `|nll - (kl + entropy)|` on an emitted report.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no sequences to evaluate")]
    Empty,
    #[error("sequences of length {0} have no transitions")]
    TooShort(usize),
    #[error("sequence {sequence} has length {len}, expected {expected}")]
    Ragged { sequence: usize, len: usize, expected: usize },
    #[error("sequence {sequence} still masked at position {position}")]
    Masked { sequence: usize, position: usize },
    #[error("sequence {sequence} position {position}: token {token} out of range for vocabulary {vocab_size}")]
    TokenOutOfRange {
        sequence: usize,
        position: usize,
        token: u32,
        vocab_size: usize,
    },
    #[error("cannot merge statistics: {0}")]
    Incompatible(String),
    #[error("nll {nll} differs from kl + entropy {sum} by more than {IDENTITY_TOLERANCE}")]
    Identity { nll: f64, sum: f64 },
}

/// Pooled transition counts of a batch of equal-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStats {
    vocab_size: usize,
    rows: Vec<BTreeMap<u32, u64>>,
    row_totals: Vec<u64>,
    sequences: usize,
    length: usize,
}

impl TransitionStats {
    fn empty(vocab_size: usize, length: usize) -> Self {
        Self {
            vocab_size,
            rows: vec![BTreeMap::new(); vocab_size],
            row_totals: vec![0; vocab_size],
            sequences: 0,
            length,
        }
    }

    /// Counts transitions of `sequences` in parallel. All sequences must
    /// share one length of at least 2 and be fully unmasked.
    pub fn accumulate(sequences: &[Vec<u32>], vocab_size: usize) -> Result<Self, MetricsError> {
        let first = sequences.first().ok_or(MetricsError::Empty)?;
        let length = first.len();
        if length < 2 {
            return Err(MetricsError::TooShort(length));
        }
        const CHUNK: usize = 32;
        sequences
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut part = Self::empty(vocab_size, length);
                for (k, seq) in chunk.iter().enumerate() {
                    part.push(c * CHUNK + k, seq)?;
                }
                Ok(part)
            })
            .try_reduce(
                || Self::empty(vocab_size, length),
                |mut a, b| {
                    a.merge(&b)?;
                    Ok(a)
                },
            )
    }

    fn push(&mut self, index: usize, seq: &[u32]) -> Result<(), MetricsError> {
        if seq.len() != self.length {
            return Err(MetricsError::Ragged {
                sequence: index,
                len: seq.len(),
                expected: self.length,
            });
        }
        for (position, &token) in seq.iter().enumerate() {
            if token == MASK {
                return Err(MetricsError::Masked { sequence: index, position });
            }
            if token as usize >= self.vocab_size {
                return Err(MetricsError::TokenOutOfRange {
                    sequence: index,
                    position,
                    token,
                    vocab_size: self.vocab_size,
                });
            }
        }
        for w in seq.windows(2) {
            *self.rows[w[0] as usize].entry(w[1]).or_insert(0) += 1;
            self.row_totals[w[0] as usize] += 1;
        }
        self.sequences += 1;
        Ok(())
    }

    /// Adds the counts of `other`; the result equals accumulating the
    /// concatenated batches.
    pub fn merge(&mut self, other: &TransitionStats) -> Result<(), MetricsError> {
        if other.vocab_size != self.vocab_size || other.length != self.length {
            return Err(MetricsError::Incompatible(format!(
                "(V {}, T {}) vs (V {}, T {})",
                self.vocab_size, self.length, other.vocab_size, other.length
            )));
        }
        for (dst, src) in self.rows.iter_mut().zip(&other.rows) {
            for (&j, &c) in src {
                *dst.entry(j).or_insert(0) += c;
            }
        }
        for (a, b) in self.row_totals.iter_mut().zip(&other.row_totals) {
            *a += b;
        }
        self.sequences += other.sequences;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sequences(&self) -> usize {
        self.sequences
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `M = N (T - 1)`.
    pub fn total_transitions(&self) -> u64 {
        (self.sequences * (self.length - 1)) as u64
    }

    pub fn count(&self, from: u32, to: u32) -> u64 {
        self.rows[from as usize].get(&to).copied().unwrap_or(0)
    }

    pub fn row(&self, from: usize) -> &BTreeMap<u32, u64> {
        &self.rows[from]
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn distinct_pairs(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    /// Empirical predecessor frequency `pi_hat`.
    pub fn pi_hat(&self) -> Vec<f64> {
        let m = self.total_transitions() as f64;
        self.row_totals.iter().map(|&n| n as f64 / m).collect()
    }

    /// Calls `f(i, j, c, n_i)` for every observed transition type in
    /// ascending `(i, j)` order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, f64, f64)) {
        for (i, row) in self.rows.iter().enumerate() {
            let n = self.row_totals[i] as f64;
            for (&j, &c) in row {
                f(i, j as usize, c as f64, n);
            }
        }
    }
}

/// `-sum_i pi_hat(i) sum_j p_hat(j|i) log P'(j|i)`.
pub fn nll_rate(stats: &TransitionStats, kernel: &TransitionKernel) -> f64 {
    let mut acc = 0.0;
    stats.for_each(|i, j, c, _| acc -= c * kernel.prob(i, j).ln());
    acc / stats.total_transitions() as f64
}

/// State-weighted KL of the empirical conditionals from the kernel rows.
/// Unobserved cells contribute nothing.
pub fn kl_rate(stats: &TransitionStats, kernel: &TransitionKernel) -> f64 {
    let mut acc = 0.0;
    stats.for_each(|i, j, c, n| acc += c * (c / (n * kernel.prob(i, j))).ln());
    acc / stats.total_transitions() as f64
}

/// State-weighted entropy of the empirical conditionals.
pub fn entropy_rate(stats: &TransitionStats) -> f64 {
    let mut acc = 0.0;
    stats.for_each(|_, _, c, n| acc -= c * (c / n).ln());
    acc / stats.total_transitions() as f64
}

/// State-weighted total variation between empirical and kernel rows. Cells
/// outside both the observed and the sparse support differ by exactly
/// `eps nu(j)` and are summed in closed form.
pub fn tv_rate(stats: &TransitionStats, kernel: &TransitionKernel) -> f64 {
    let eps = kernel.epsilon();
    let nu = kernel.nu();
    let mut acc = 0.0;
    for (i, row) in stats.rows.iter().enumerate() {
        let n = stats.row_totals[i];
        if n == 0 {
            continue;
        }
        let n = n as f64;
        let (ids, _) = kernel.sparse_row(i);
        let mut diff = 0.0;
        let mut covered_nu = 0.0;
        // merge walk over two ascending id lists
        let mut seen = row.iter().peekable();
        let mut sparse = ids.iter().peekable();
        loop {
            let j = match (seen.peek(), sparse.peek()) {
                (None, None) => break,
                (Some((&a, _)), None) => a,
                (None, Some(&&b)) => b,
                (Some((&a, _)), Some(&&b)) => a.min(b),
            };
            let mut p_hat = 0.0;
            if let Some((&a, &c)) = seen.peek() {
                if a == j {
                    p_hat = c as f64 / n;
                    seen.next();
                }
            }
            if sparse.peek().is_some_and(|&&b| b == j) {
                sparse.next();
            }
            let j = j as usize;
            diff += (p_hat - kernel.prob(i, j)).abs();
            covered_nu += nu[j];
        }
        diff += eps * (1.0 - covered_nu).max(0.0);
        acc += n * 0.5 * diff;
    }
    acc / stats.total_transitions() as f64
}

/// Mass of observed transitions that fall outside the sparse support.
pub fn other_mass(stats: &TransitionStats, kernel: &TransitionKernel) -> f64 {
    let mut off = 0.0;
    stats.for_each(|i, j, c, _| {
        if !kernel.in_support(i, j) {
            off += c;
        }
    });
    off / stats.total_transitions() as f64
}

/// Distinct observed transition types per observed transition.
pub fn support_fraction(stats: &TransitionStats) -> f64 {
    stats.distinct_pairs() as f64 / stats.total_transitions() as f64
}

/// `||pi_hat - pi0||_1` against the chain's stationary distribution.
pub fn unigram_l1(stats: &TransitionStats, pi0: &[f64]) -> f64 {
    stats.pi_hat().iter().zip(pi0).map(|(a, b)| (a - b).abs()).sum()
}

/// How n-gram diversity aggregates over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Mean over sequences of the within-sequence unique n-gram ratio.
    #[default]
    PerSequence,
    /// Unique n-grams over all n-grams of the whole batch.
    Pooled,
}

/// Ratio of unique to total n-grams. Sequences shorter than `n` are skipped.
pub fn ngram_diversity(sequences: &[Vec<u32>], n: usize, pooling: Pooling) -> f64 {
    assert!(n >= 1);
    match pooling {
        Pooling::PerSequence => {
            let ratios: Vec<f64> = sequences
                .par_iter()
                .filter(|s| s.len() >= n)
                .map(|s| {
                    let set: HashSet<&[u32]> = s.windows(n).collect();
                    set.len() as f64 / (s.len() - n + 1) as f64
                })
                .collect();
            if ratios.is_empty() {
                0.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            }
        }
        Pooling::Pooled => {
            let mut set: HashSet<&[u32]> = HashSet::new();
            let mut total = 0usize;
            for s in sequences.iter().filter(|s| s.len() >= n) {
                set.extend(s.windows(n));
                total += s.len() - n + 1;
            }
            if total == 0 {
                0.0
            } else {
                set.len() as f64 / total as f64
            }
        }
    }
}

/// `1 - distinct / N`.
pub fn duplication_rate(sequences: &[Vec<u32>]) -> f64 {
    if sequences.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<&[u32]> = sequences.iter().map(Vec::as_slice).collect();
    1.0 - distinct.len() as f64 / sequences.len() as f64
}

/// The numeric part of one result row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nll_rate: f64,
    pub kl_rate: f64,
    pub tv_rate: f64,
    pub entropy_rate: f64,
    pub unigram_l1: f64,
    pub diversity_2gram: f64,
    pub diversity_3gram: f64,
    pub duplication_rate: f64,
    pub other_mass: f64,
    pub support_fraction: f64,
}

impl Metrics {
    pub fn identity_residual(&self) -> f64 {
        (self.nll_rate - (self.kl_rate + self.entropy_rate)).abs()
    }

    pub fn check_identity(&self) -> Result<(), MetricsError> {
        if self.identity_residual() <= IDENTITY_TOLERANCE {
            Ok(())
        } else {
            Err(MetricsError::Identity {
                nll: self.nll_rate,
                sum: self.kl_rate + self.entropy_rate,
            })
        }
    }

    /// Values in table column order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.nll_rate,
            self.kl_rate,
            self.tv_rate,
            self.entropy_rate,
            self.unigram_l1,
            self.diversity_2gram,
            self.diversity_3gram,
            self.duplication_rate,
            self.other_mass,
            self.support_fraction,
        ]
    }
}

/// Transition metrics from precomputed counts plus surface metrics of the
/// sequences themselves.
pub fn evaluate_with_stats(
    sequences: &[Vec<u32>],
    stats: &TransitionStats,
    chain: &OracleChain,
) -> Result<Metrics, MetricsError> {
    let kernel = chain.kernel();
    let m = Metrics {
        nll_rate: nll_rate(stats, kernel),
        kl_rate: kl_rate(stats, kernel),
        tv_rate: tv_rate(stats, kernel),
        entropy_rate: entropy_rate(stats),
        unigram_l1: unigram_l1(stats, chain.pi0()),
        diversity_2gram: ngram_diversity(sequences, 2, Pooling::PerSequence),
        diversity_3gram: ngram_diversity(sequences, 3, Pooling::PerSequence),
        duplication_rate: duplication_rate(sequences),
        other_mass: other_mass(stats, kernel),
        support_fraction: support_fraction(stats),
    };
    m.check_identity()?;
    Ok(m)
}

/// Full metric suite of a batch.
pub fn evaluate(sequences: &[Vec<u32>], chain: &OracleChain) -> Result<Metrics, MetricsError> {
    let stats = TransitionStats::accumulate(sequences, chain.vocab_size())?;
    evaluate_with_stats(sequences, &stats, chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunKind {
    Baseline,
    Diffusion,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunKind::Baseline => "Baseline",
            RunKind::Diffusion => "Diffusion",
        })
    }
}

/// Exact CSV header of result tables.
pub const CSV_HEADER: [&str; 15] = [
    "Dataset",
    "Type",
    "Model",
    "Steps",
    "Seed",
    "NLL",
    "KL rate",
    "TV rate",
    "Ent rate",
    "Unigram L1",
    "2-gram Diversity",
    "3-gram Diversity",
    "Duplicate",
    "Other mass",
    "Support frac",
];

/// Placeholder for columns that do not apply to a row.
pub const NOT_APPLICABLE: &str = "—";

/// One labelled result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub kind: RunKind,
    pub model: String,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| NOT_APPLICABLE.to_string());
        let mut rec = vec![
            self.dataset.clone(),
            self.kind.to_string(),
            self.model.clone(),
            opt(self.steps.map(|s| s.to_string())),
            opt(self.seed.map(|s| s.to_string())),
        ];
        rec.extend(self.metrics.values().iter().map(|v| format!("{v:.4}")));
        rec
    }

    /// Single-line JSON record with full precision.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Writes the header and one line per report.
pub fn write_csv<W: Write>(reports: &[MetricsReport], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.write_record(r.csv_record())?;
    }
    out.flush()?;
    Ok(())
}
