use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{load_token_stream, stream_text8_file, TextMode, TEXT8_VOCAB};
use crate::kernel::{
    build_kernel, nearest_rank, smoothed_unigram, sparsify, stationary, stationary_sanity, BigramCounter, BigramCounts,
    NuSmoothing, SanityReport, TransitionKernel, STATIONARY_MAX_ITERS, STATIONARY_TOL,
};

/// Where oracle counts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorpusSource {
    /// Raw text through the 27-symbol character codec.
    Text8 { path: PathBuf, mode: TextMode },
    /// Pre-tokenized id stream; `vocab_size` overrides the header if set.
    Tokens { path: PathBuf, vocab_size: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub mass: f64,
    pub percentile: f64,
    pub epsilon: f64,
    /// Keep every observed successor (mass 1, percentile 1).
    pub dense: bool,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            mass: 0.99,
            percentile: 0.9,
            epsilon: 1e-4,
            dense: false,
        }
    }
}

impl OracleParams {
    /// Character-level preset: no truncation, teleport kept for positivity.
    pub fn text8() -> Self {
        Self {
            dense: true,
            ..Self::default()
        }
    }

    fn effective(&self) -> (f64, f64) {
        if self.dense {
            (1.0, 1.0)
        } else {
            (self.mass, self.percentile)
        }
    }
}

/// Human-readable account of an oracle build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub vocab_size: usize,
    pub k: usize,
    pub epsilon: f64,
    pub mass: f64,
    pub percentile: f64,
    pub nnz: usize,
    pub tokens: u64,
    pub distinct_pairs: usize,
    pub unigram_fallback: Vec<u32>,
    /// `(p50, p90, max)` of the per-state supports.
    pub k_star_quantiles: (usize, usize, usize),
    /// `(lo, hi, states)` bins of the per-state supports.
    pub k_star_histogram: Vec<(usize, usize, usize)>,
    pub stationary_iterations: usize,
    pub stationary_residual: f64,
    pub sanity: SanityReport,
    pub sanity_passed: bool,
}

impl OracleSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "V = {}\nK = {}\neps = {:e}\nmass = {}\npercentile = {}\nnnz = {}\ntokens = {}\ndistinct pairs = {}\n",
            self.vocab_size,
            self.k,
            self.epsilon,
            self.mass,
            self.percentile,
            self.nnz,
            self.tokens,
            self.distinct_pairs
        );
        let (p50, p90, max) = self.k_star_quantiles;
        s += &format!("k* p50 = {p50}, p90 = {p90}, max = {max}\n");
        s += &format!("unigram fallback rows = {}\n", self.unigram_fallback.len());
        s += "k* histogram (lo hi states):\n";
        for (lo, hi, n) in &self.k_star_histogram {
            s += &format!("  {lo:>6} {hi:>6} {n}\n");
        }
        s += &format!(
            "stationary: {} iterations, residual {:e}\nsanity: {} initializations, max pairwise L1 {:e}, max row-sum error {:e}: {}\n",
            self.stationary_iterations,
            self.stationary_residual,
            self.sanity.initializations,
            self.sanity.max_pairwise_l1,
            self.sanity.max_row_sum_error,
            if self.sanity_passed { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Streams a corpus into bigram counts.
pub fn count_corpus(source: &CorpusSource) -> Result<BigramCounts, HarnessError> {
    match source {
        CorpusSource::Text8 { path, mode } => {
            let mut counter = BigramCounter::new(TEXT8_VOCAB);
            let mut err = None;
            stream_text8_file(path, *mode, |ids| {
                for &id in ids {
                    if let Err(e) = counter.push(id) {
                        err = Some(e);
                        break;
                    }
                }
                Ok(())
            })?;
            if let Some(e) = err {
                return Err(e.into());
            }
            Ok(counter.finish())
        }
        CorpusSource::Tokens { path, vocab_size } => {
            let reader = load_token_stream(path, *vocab_size)?;
            let mut counter = BigramCounter::new(reader.vocab_size());
            for id in reader {
                counter.push(id?)?;
            }
            Ok(counter.finish())
        }
    }
}

/// Counts, truncation, teleport mixture and stationary checks.
pub fn build_oracle_from_counts(
    counts: &BigramCounts,
    params: &OracleParams,
) -> Result<(TransitionKernel, OracleSummary), HarnessError> {
    let (mass, percentile) = params.effective();
    let sp = sparsify(counts, mass, percentile)?;
    let nu = smoothed_unigram(counts);
    let kernel = build_kernel(sp.rows.clone(), params.epsilon, &nu, NuSmoothing::None)?.with_k(sp.k);
    let st = stationary(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITERS)?;
    let sanity = stationary_sanity(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITERS)?;
    let ks = sp.observed_k_star();
    let summary = OracleSummary {
        vocab_size: kernel.vocab_size(),
        k: kernel.k(),
        epsilon: params.epsilon,
        mass,
        percentile,
        nnz: kernel.nnz(),
        tokens: counts.total_tokens(),
        distinct_pairs: counts.distinct_pairs(),
        unigram_fallback: sp.unigram_fallback.clone(),
        k_star_quantiles: (
            nearest_rank(&ks, 0.5),
            nearest_rank(&ks, 0.9),
            ks.iter().copied().max().unwrap_or(0),
        ),
        k_star_histogram: sp.k_star_histogram(20),
        stationary_iterations: st.iterations,
        stationary_residual: st.residual,
        sanity_passed: sanity.passed(),
        sanity,
    };
    Ok((kernel, summary))
}

pub fn build_oracle(source: &CorpusSource, params: &OracleParams) -> Result<(TransitionKernel, OracleSummary), HarnessError> {
    let counts = count_corpus(source)?;
    build_oracle_from_counts(&counts, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::count_bigrams;

    #[test]
    fn tiny_corpus_matches_hand_counts() {
        // 0->1 x2, 0->2 x1, 1->0 x2, 2->0 x1
        let counts = count_bigrams([0, 1, 0, 2, 0, 1, 0], 3).unwrap();
        // the raw chain is periodic; the teleport makes it ergodic
        let params = OracleParams {
            epsilon: 0.01,
            ..OracleParams::text8()
        };
        let (k, summary) = build_oracle_from_counts(&counts, &params).unwrap();
        assert_eq!(k.row_pairs(0), vec![(1, 2.0 / 3.0), (2, 1.0 / 3.0)]);
        assert_eq!(k.row_pairs(1), vec![(0, 1.0)]);
        assert_eq!(k.row_pairs(2), vec![(0, 1.0)]);
        assert_eq!(summary.k, 2);
        assert!((k.prob(0, 0) - 0.01 * 5.0 / 10.0).abs() < 1e-15);
        assert!(summary.sanity_passed, "{}", summary.to_text());
    }

    #[test]
    fn text_corpus_builds_dense_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        std::fs::write(&path, "the cat sat on the mat and the dog ate the hat").unwrap();
        let source = CorpusSource::Text8 {
            path,
            mode: TextMode::Strict,
        };
        let (k, summary) = build_oracle(&source, &OracleParams::text8()).unwrap();
        assert_eq!(k.vocab_size(), 27);
        assert_eq!(summary.tokens, 46);
        assert!(summary.sanity_passed);
        // letters never seen as predecessors fall back to the unigram row
        assert!(summary.unigram_fallback.contains(&26));
        assert!(summary.to_text().contains("K = "));
    }
}
