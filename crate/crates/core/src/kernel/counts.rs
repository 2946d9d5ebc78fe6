use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::KernelError;
use crate::corpus::DOC_SEPARATOR;

/// Sparse bigram and unigram counts over a vocabulary of size `V`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BigramCounts {
    vocab_size: usize,
    rows: Vec<HashMap<u32, u64>>,
    unigram: Vec<u64>,
    total_tokens: u64,
}

impl BigramCounts {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            rows: vec![HashMap::new(); vocab_size],
            unigram: vec![0; vocab_size],
            total_tokens: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn unigram(&self) -> &[u64] {
        &self.unigram
    }

    pub fn count(&self, from: u32, to: u32) -> u64 {
        self.rows[from as usize].get(&to).copied().unwrap_or(0)
    }

    /// Successors of `state` sorted by id.
    pub fn row(&self, state: u32) -> Vec<(u32, u64)> {
        let mut row: Vec<_> = self.rows[state as usize].iter().map(|(&j, &c)| (j, c)).collect();
        row.sort_unstable_by_key(|&(j, _)| j);
        row
    }

    pub fn row_total(&self, state: u32) -> u64 {
        self.rows[state as usize].values().sum()
    }

    /// Number of distinct `(i, j)` pairs.
    pub fn distinct_pairs(&self) -> usize {
        self.rows.iter().map(HashMap::len).sum()
    }

    /// All recorded pairs in `(i, j)` order.
    pub fn pairs(&self) -> Vec<(u32, u32, u64)> {
        (0..self.vocab_size as u32)
            .flat_map(|i| self.row(i).into_iter().map(move |(j, c)| (i, j, c)))
            .collect()
    }

    /// Adds another count table over the same vocabulary.
    pub fn merge(&mut self, other: &BigramCounts) -> Result<(), KernelError> {
        if other.vocab_size != self.vocab_size {
            return Err(KernelError::VocabMismatch {
                expected: self.vocab_size,
                found: other.vocab_size,
            });
        }
        for (dst, src) in self.rows.iter_mut().zip(&other.rows) {
            for (&j, &c) in src {
                *dst.entry(j).or_insert(0) += c;
            }
        }
        for (dst, &src) in self.unigram.iter_mut().zip(&other.unigram) {
            *dst += src;
        }
        self.total_tokens += other.total_tokens;
        Ok(())
    }
}

/// Streaming bigram accumulator.
///
/// Transitions never cross a document boundary: after
/// [`end_document`](Self::end_document) (or a [`DOC_SEPARATOR`] id passed to
/// [`push`](Self::push)) the next token starts a fresh context.
#[derive(Debug, Clone)]
pub struct BigramCounter {
    counts: BigramCounts,
    prev: Option<u32>,
    position: u64,
}

impl BigramCounter {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            counts: BigramCounts::new(vocab_size),
            prev: None,
            position: 0,
        }
    }

    pub fn push(&mut self, id: u32) -> Result<(), KernelError> {
        let position = self.position;
        self.position += 1;
        if id == DOC_SEPARATOR {
            self.prev = None;
            return Ok(());
        }
        if id as usize >= self.counts.vocab_size {
            return Err(KernelError::TokenOutOfRange {
                position,
                id,
                vocab_size: self.counts.vocab_size,
            });
        }
        self.counts.unigram[id as usize] += 1;
        self.counts.total_tokens += 1;
        if let Some(p) = self.prev {
            *self.counts.rows[p as usize].entry(id).or_insert(0) += 1;
        }
        self.prev = Some(id);
        Ok(())
    }

    pub fn end_document(&mut self) {
        self.prev = None;
    }

    pub fn finish(self) -> BigramCounts {
        self.counts
    }
}

/// Counts consecutive pairs in a token stream. [`DOC_SEPARATOR`] ids split
/// documents.
pub fn count_bigrams<I>(stream: I, vocab_size: usize) -> Result<BigramCounts, KernelError>
where
    I: IntoIterator<Item = u32>,
{
    let mut counter = BigramCounter::new(vocab_size);
    for id in stream {
        counter.push(id)?;
    }
    Ok(counter.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_stream() {
        let c = count_bigrams([0, 1, 1, 2], 3).unwrap();
        assert_eq!(c.pairs(), vec![(0, 1, 1), (1, 1, 1), (1, 2, 1)]);
        assert_eq!(c.unigram(), &[1, 2, 1]);
        assert_eq!(c.total_tokens(), 4);
    }

    #[test]
    fn empty_stream() {
        let c = count_bigrams(std::iter::empty(), 5).unwrap();
        assert_eq!(c.total_tokens(), 0);
        assert_eq!(c.distinct_pairs(), 0);
    }

    #[test]
    fn separator_restarts_context() {
        let c = count_bigrams([0, 1, DOC_SEPARATOR, 2, 0], 3).unwrap();
        assert_eq!(c.pairs(), vec![(0, 1, 1), (2, 0, 1)]);
        assert_eq!(c.unigram(), &[2, 1, 1]);
    }

    #[test]
    fn out_of_range_reports_position() {
        let err = count_bigrams([0, 1, DOC_SEPARATOR, 3], 3).unwrap_err();
        assert_eq!(
            err,
            KernelError::TokenOutOfRange {
                position: 3,
                id: 3,
                vocab_size: 3
            }
        );
    }

    #[test]
    fn merge_equals_concatenated_documents() {
        let a = count_bigrams([0, 1, 2], 3).unwrap();
        let b = count_bigrams([2, 2, 1], 3).unwrap();
        let mut merged = a.clone();
        merged.merge(&b).unwrap();
        let joint = count_bigrams([0, 1, 2, DOC_SEPARATOR, 2, 2, 1], 3).unwrap();
        assert_eq!(merged, joint);
    }
}
