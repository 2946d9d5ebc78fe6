use serde::{Deserialize, Serialize};

use super::{BigramCounts, KernelError};

/// Outcome of cumulative-mass truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sparsified {
    /// Global sparsity level.
    pub k: usize,
    /// Per-state effective support `k_i*`; `None` for states with no outgoing
    /// transitions.
    pub k_star: Vec<Option<usize>>,
    /// Truncated, renormalized rows sorted by successor id.
    pub rows: Vec<Vec<(u32, f64)>>,
    /// States whose row was replaced by the truncated unigram distribution.
    pub unigram_fallback: Vec<u32>,
}

impl Sparsified {
    /// `k_i*` values of states that have outgoing transitions.
    pub fn observed_k_star(&self) -> Vec<usize> {
        self.k_star.iter().flatten().copied().collect()
    }

    /// Histogram of `k_i*` with `bins` equal-width bins over `[1, max]`.
    pub fn k_star_histogram(&self, bins: usize) -> Vec<(usize, usize, usize)> {
        let ks = self.observed_k_star();
        let Some(&max) = ks.iter().max() else {
            return Vec::new();
        };
        let bins = bins.max(1).min(max);
        let width = max.div_ceil(bins);
        let mut hist: Vec<(usize, usize, usize)> = (0..bins)
            .map(|b| (b * width + 1, ((b + 1) * width).min(max), 0))
            .collect();
        for k in ks {
            let b = ((k - 1) / width).min(bins - 1);
            hist[b].2 += 1;
        }
        hist
    }
}

/// Entries sorted by descending count, ties by ascending id.
fn ranked(mut row: Vec<(u32, u64)>) -> Vec<(u32, u64)> {
    row.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    row
}

/// Smallest `k` whose top-`k` entries of a ranked row carry at least
/// `mass_threshold` of the row total.
pub fn effective_support(ranked_counts: &[u64], mass_threshold: f64) -> usize {
    let total: u64 = ranked_counts.iter().sum();
    let target = mass_threshold * total as f64;
    let mut acc = 0u64;
    for (k, &c) in ranked_counts.iter().enumerate() {
        acc += c;
        if acc as f64 >= target {
            return k + 1;
        }
    }
    ranked_counts.len()
}

/// Nearest-rank percentile of a nonempty sample.
pub fn nearest_rank(values: &[usize], percentile: f64) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = (percentile * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn keep_top(ranked: &[(u32, u64)], k: usize) -> Vec<(u32, f64)> {
    let kept = &ranked[..k.min(ranked.len())];
    let total: u64 = kept.iter().map(|&(_, c)| c).sum();
    let mut row: Vec<(u32, f64)> = kept
        .iter()
        .map(|&(j, c)| (j, c as f64 / total as f64))
        .collect();
    row.sort_unstable_by_key(|&(j, _)| j);
    row
}

/// Top-`K` truncation with `K` chosen as the `percentile` quantile of the
/// per-state supports needed to reach `mass_threshold`.
pub fn sparsify(
    counts: &BigramCounts,
    mass_threshold: f64,
    percentile: f64,
) -> Result<Sparsified, KernelError> {
    if !(mass_threshold > 0.0 && mass_threshold <= 1.0) {
        return Err(KernelError::InvalidParameter(format!(
            "mass threshold {mass_threshold} not in (0, 1]"
        )));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(KernelError::InvalidParameter(format!(
            "percentile {percentile} not in (0, 1]"
        )));
    }
    let v = counts.vocab_size();
    let ranked_rows: Vec<Vec<(u32, u64)>> = (0..v as u32).map(|i| ranked(counts.row(i))).collect();
    let k_star: Vec<Option<usize>> = ranked_rows
        .iter()
        .map(|row| {
            (!row.is_empty()).then(|| {
                let cs: Vec<u64> = row.iter().map(|&(_, c)| c).collect();
                effective_support(&cs, mass_threshold)
            })
        })
        .collect();
    let observed: Vec<usize> = k_star.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(KernelError::EmptyCounts);
    }
    let k = nearest_rank(&observed, percentile);

    let unigram_ranked = ranked(
        counts
            .unigram()
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(j, &c)| (j as u32, c))
            .collect(),
    );
    let mut unigram_fallback = Vec::new();
    let rows = ranked_rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.is_empty() {
                unigram_fallback.push(i as u32);
                keep_top(&unigram_ranked, k)
            } else {
                keep_top(row, k)
            }
        })
        .collect();
    Ok(Sparsified {
        k,
        k_star,
        rows,
        unigram_fallback,
    })
}
