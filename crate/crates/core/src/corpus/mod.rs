//! Corpus ingestion, tokenization, batch sampling and unigram statistics.

mod vocab;
mod zipf;

pub use vocab::{TokenizerMode, Vocabulary, UNK};
pub use zipf::ZipfCorpus;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("corpus text is empty")]
    EmptyText,
    #[error("vocabulary must hold at least 2 entries, got {0}")]
    VocabTooSmall(usize),
    #[error("unknown tokenizer mode {0:?} (expected word or byte)")]
    UnknownMode(String),
    #[error("malformed vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("stream of {len} tokens is too short for context length {context}")]
    StreamTooShort { len: usize, context: usize },
    #[error("invalid Zipf parameters: {0}")]
    BadZipf(String),
}

/// Token ids plus the context width used for next-token examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    ids: Vec<usize>,
    vocab_size: usize,
    context_length: usize,
}

impl TokenStream {
    pub fn new(ids: Vec<usize>, vocab_size: usize, context_length: usize) -> Result<Self, CorpusError> {
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(CorpusError::IdOutOfRange { id, vocab: vocab_size });
        }
        if context_length == 0 || ids.len() < context_length + 1 {
            return Err(CorpusError::StreamTooShort { len: ids.len(), context: context_length });
        }
        Ok(Self { ids, vocab_size, context_length })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    /// Number of distinct (context, target) positions.
    pub fn num_examples(&self) -> usize {
        self.ids.len() - self.context_length
    }

    pub fn example(&self, start: usize) -> Example<'_> {
        let end = start + self.context_length;
        Example { context: &self.ids[start..end], target: self.ids[end] }
    }

    /// Splits off the trailing `fraction` of the stream. Both halves keep the
    /// context length; the tail is returned as `None` when too short.
    pub fn split_tail(&self, fraction: f64) -> (TokenStream, Option<TokenStream>) {
        let tail = ((self.ids.len() as f64) * fraction).floor() as usize;
        let head_len = self.ids.len() - tail;
        if tail < self.context_length + 1 || head_len < self.context_length + 1 {
            return (self.clone(), None);
        }
        let head = Self { ids: self.ids[..head_len].to_vec(), ..*self };
        let rest = Self { ids: self.ids[head_len..].to_vec(), ..*self };
        (head, Some(rest))
    }
}

/// One next-token example: the context window and the token that follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example<'a> {
    pub context: &'a [usize],
    pub target: usize,
}

/// Counts `nᵢ` and probabilities `p̃ᵢ = nᵢ / Σⱼ nⱼ`. Unseen tokens keep
/// probability zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramDistribution {
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
}

impl UnigramDistribution {
    pub fn from_ids(ids: &[usize], vocab_size: usize) -> Self {
        let mut counts = vec![0u64; vocab_size];
        for &id in ids {
            counts[id] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let probs = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        Self { counts, probs }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// CSV with header `index,token,count,prob`.
    pub fn write_csv<W: Write>(&self, vocab: &Vocabulary, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "token", "count", "prob"])?;
        for (i, (&c, &p)) in self.counts.iter().zip(&self.probs).enumerate() {
            w.write_record([i.to_string(), vocab.token(i).to_string(), c.to_string(), format!("{p:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn unigram(stream: &TokenStream) -> UnigramDistribution {
    UnigramDistribution::from_ids(stream.ids(), stream.vocab_size())
}

/// Seeded sampler of next-token examples. Each example start is drawn
/// uniformly from the valid positions of the stream.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    stream: &'a TokenStream,
    batch_size: usize,
    rng: SplitMix64,
}

impl<'a> BatchSampler<'a> {
    pub fn new(stream: &'a TokenStream, batch_size: usize, seed: u64) -> Self {
        Self::with_rng(stream, batch_size, SplitMix64::new(seed))
    }

    pub fn with_rng(stream: &'a TokenStream, batch_size: usize, rng: SplitMix64) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        Self { stream, batch_size, rng }
    }

    pub fn rng(&self) -> SplitMix64 {
        self.rng
    }

    pub fn next_example(&mut self) -> Example<'a> {
        let start = self.rng.below(self.stream.num_examples());
        self.stream.example(start)
    }

    pub fn next_batch(&mut self) -> Vec<Example<'a>> {
        (0..self.batch_size).map(|_| self.next_example()).collect()
    }
}

impl<'a> Iterator for BatchSampler<'a> {
    type Item = Vec<Example<'a>>;
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

/// Reads and tokenizes a corpus in one pass.
pub fn ingest(
    text: &str,
    mode: TokenizerMode,
    max_vocab: usize,
    context_length: usize,
) -> Result<(Vocabulary, TokenStream), CorpusError> {
    let vocab = Vocabulary::build(text, mode, max_vocab)?;
    let ids = vocab.encode(text);
    let stream = TokenStream::new(ids, vocab.len(), context_length)?;
    Ok((vocab, stream))
}
