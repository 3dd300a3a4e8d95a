use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Word,
    Byte,
}

impl FromStr for TokenizerMode {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Self::Word),
            "byte" => Ok(Self::Byte),
            other => Err(CorpusError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Word => "word",
            Self::Byte => "byte",
        })
    }
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

/// Dense token index. The unknown token is always the last entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Word mode ranks whitespace-separated tokens by (count desc, token asc)
    /// and keeps the top `max_vocab - 1`; byte mode is the fixed 256-byte
    /// alphabet. Both append `<unk>`.
    pub fn build(text: &str, mode: TokenizerMode, max_vocab: usize) -> Result<Self, CorpusError> {
        if text.is_empty() {
            return Err(CorpusError::EmptyText);
        }
        let tokens = match mode {
            TokenizerMode::Byte => (0..=255u8).map(byte_token).collect(),
            TokenizerMode::Word => {
                if max_vocab < 2 {
                    return Err(CorpusError::VocabTooSmall(max_vocab));
                }
                let mut counts: HashMap<&str, u64> = HashMap::new();
                for w in text.split_whitespace().filter(|w| *w != UNK) {
                    *counts.entry(w).or_default() += 1;
                }
                if counts.is_empty() {
                    return Err(CorpusError::EmptyText);
                }
                let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                ranked.truncate(max_vocab - 1);
                ranked.into_iter().map(|(w, _)| w.to_string()).collect()
            }
        };
        Ok(Self::from_tokens_unchecked(mode, tokens))
    }

    fn from_tokens_unchecked(mode: TokenizerMode, mut tokens: Vec<String>) -> Self {
        tokens.push(UNK.to_string());
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { mode, tokens, index }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of a token, `None` for unknown words and for `<unk>` itself.
    pub fn resolve(&self, token: &str) -> Option<usize> {
        self.get(token).filter(|&i| i != self.unk_index())
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        match self.mode {
            TokenizerMode::Byte => text.bytes().map(usize::from).collect(),
            TokenizerMode::Word => text
                .split_whitespace()
                .map(|w| self.get(w).unwrap_or(self.unk_index()))
                .collect(),
        }
    }

    /// One token per line, line number = index.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse_file(contents: &str) -> Result<Self, CorpusError> {
        let lines: Vec<&str> = contents.lines().collect();
        match lines.last() {
            Some(&last) if last == UNK => {}
            _ => return Err(CorpusError::BadVocabFile("last line must be <unk>".into())),
        }
        let body: Vec<String> = lines[..lines.len() - 1].iter().map(|s| s.to_string()).collect();
        if body.is_empty() {
            return Err(CorpusError::VocabTooSmall(1));
        }
        let is_bytes = body.len() == 256 && body.iter().enumerate().all(|(b, t)| *t == byte_token(b as u8));
        let mode = if is_bytes { TokenizerMode::Byte } else { TokenizerMode::Word };
        let vocab = Self::from_tokens_unchecked(mode, body);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(CorpusError::BadVocabFile("duplicate tokens".into()));
        }
        if let Some(t) = vocab.tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(CorpusError::BadVocabFile(format!("invalid token {t:?}")));
        }
        Ok(vocab)
    }
}
