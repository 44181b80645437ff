use std::io;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Tokenizer};

/// Fraction of the token stream held out for evaluation (taken from the end).
pub const HELD_OUT_FRACTION: f64 = 0.1;

pub fn load_corpus(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::io(path, io::Error::new(io::ErrorKind::InvalidData, "corpus is empty")));
    }
    Ok(text)
}

/// Tokenized corpus split into a training region and a held-out tail.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tokenizer: Tokenizer,
    pub tokens: Vec<usize>,
    pub train_end: usize,
}

impl Dataset {
    pub fn new(text: &str, cfg: &ModelConfig) -> Result<Self> {
        let tokenizer = Tokenizer::build(cfg.tokenizer, text, cfg.vocab_size)?;
        let tokens = tokenizer.encode(text);
        let held = ((tokens.len() as f64) * HELD_OUT_FRACTION).ceil() as usize;
        let train_end = tokens.len() - held;
        let need = cfg.max_seq_len + 1;
        if train_end < need || held < 2 {
            return Err(Error::Input(format!(
                "corpus has {} tokens; need at least {} for training plus a held-out tail",
                tokens.len(),
                need
            )));
        }
        Ok(Dataset {
            tokenizer,
            tokens,
            train_end,
        })
    }

    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        Self::new(&load_corpus(path)?, cfg)
    }

    pub fn train(&self) -> &[usize] {
        &self.tokens[..self.train_end]
    }

    pub fn held_out(&self) -> &[usize] {
        &self.tokens[self.train_end..]
    }

    /// `count` windows of `len` tokens evenly spaced over the training region.
    pub fn calibration(&self, count: usize, len: usize) -> Vec<Vec<usize>> {
        let train = self.train();
        let len = len.min(train.len());
        let span = train.len() - len;
        (0..count)
            .map(|k| {
                let start = if count > 1 { k * span / (count - 1) } else { 0 };
                train[start..start + len].to_vec()
            })
            .collect()
    }

    /// Random training windows of `len + 1` tokens (inputs plus shifted targets).
    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize, len: usize) -> Vec<Vec<usize>> {
        let train = self.train();
        let w = (len + 1).min(train.len());
        (0..size)
            .map(|_| {
                let start = rng.gen_range(0..=train.len() - w);
                train[start..start + w].to_vec()
            })
            .collect()
    }

    /// Consecutive held-out windows of `len + 1` tokens, at most `max` of them.
    pub fn held_out_windows(&self, len: usize, max: usize) -> Vec<Vec<usize>> {
        let held = self.held_out();
        let w = (len + 1).min(held.len());
        let mut out = Vec::new();
        let mut start = 0;
        while start + w <= held.len() && out.len() < max {
            out.push(held[start..start + w].to_vec());
            start += w - 1;
        }
        out
    }
}
