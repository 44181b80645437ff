use std::collections::HashMap;

use super::config::TokenizerKind;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone)]
pub enum Tokenizer {
    /// One token per UTF-8 byte.
    Byte,
    /// Whitespace-separated words; id 0 is `<unk>`.
    Word {
        vocab: Vec<String>,
        index: HashMap<String, usize>,
    },
}

impl Tokenizer {
    /// Builds the tokenizer for `kind`. The word vocabulary holds the
    /// `vocab_size - 1` most frequent words of `corpus` (ties broken lexicographically).
    pub fn build(kind: TokenizerKind, corpus: &str, vocab_size: usize) -> Result<Self> {
        match kind {
            TokenizerKind::Byte => Ok(Tokenizer::Byte),
            TokenizerKind::Word => {
                if vocab_size < 2 {
                    return Err(Error::Config("word vocabulary needs at least 2 entries".into()));
                }
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for w in corpus.split_whitespace() {
                    *counts.entry(w).or_default() += 1;
                }
                let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                let mut vocab = vec![UNK.to_string()];
                vocab.extend(ranked.into_iter().take(vocab_size - 1).map(|(w, _)| w.to_string()));
                let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
                Ok(Tokenizer::Word { vocab, index })
            }
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        match self {
            Tokenizer::Byte => text.bytes().map(usize::from).collect(),
            Tokenizer::Word { index, .. } => text
                .split_whitespace()
                .map(|w| index.get(w).copied().unwrap_or(0))
                .collect(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        match self {
            Tokenizer::Byte => {
                let bytes: Vec<u8> = ids.iter().map(|&i| i.min(255) as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Tokenizer::Word { vocab, .. } => ids
                .iter()
                .map(|&i| vocab.get(i).map_or(UNK, String::as_str))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}
