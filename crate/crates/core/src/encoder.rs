//! Tokenization, vocabularies, and the first embedding layer.
//!
//! Each token embeds as the concatenation of its word embedding and the mean
//! of its character embeddings; padded positions are all-zero rows.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Reserved id 0: padding. Embedding row 0 is pinned to zero and never updated.
pub const PAD: u32 = 0;
/// Reserved id 1: out-of-vocabulary fallback.
pub const UNK: u32 = 1;

/// Shared surface vocabulary for words and characters.
///
/// Ids are dense and assigned in insertion order starting at 2 (0 and 1 are
/// reserved), so a vocabulary built from the same word list is always
/// identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    word_ids: HashMap<String, u32>,
    char_ids: HashMap<char, u32>,
}

impl Vocabulary {
    /// Build from word surfaces in a fixed order. Characters are collected
    /// from the surfaces in encounter order.
    pub fn from_words<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            chars: Vec::new(),
            word_ids: HashMap::new(),
            char_ids: HashMap::new(),
        };
        for surface in surfaces {
            if !vocab.word_ids.contains_key(surface) {
                let id = 2 + vocab.words.len() as u32;
                vocab.word_ids.insert(surface.to_string(), id);
                vocab.words.push(surface.to_string());
            }
            for c in surface.chars() {
                if !vocab.char_ids.contains_key(&c) {
                    let id = 2 + vocab.chars.len() as u32;
                    vocab.char_ids.insert(c, id);
                    vocab.chars.push(c);
                }
            }
        }
        vocab
    }

    /// Rebuild from the stored word/char lists (checkpoint loading).
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), 2 + i as u32))
            .collect();
        let char_ids = chars
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, 2 + i as u32))
            .collect();
        Vocabulary {
            words,
            chars,
            word_ids,
            char_ids,
        }
    }

    pub fn word_id(&self, surface: &str) -> u32 {
        self.word_ids.get(surface).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_ids.get(&c).copied().unwrap_or(UNK)
    }

    /// Word table size including PAD and UNK.
    pub fn n_words(&self) -> usize {
        self.words.len() + 2
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// A text tokenized to fixed width: `t_max` word slots, `c_max` character
/// slots per word. Padding slots hold PAD ids and `mask` false.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedText {
    pub word_ids: Vec<u32>,
    pub char_ids: Vec<Vec<u32>>,
    pub mask: Vec<bool>,
}

impl TokenizedText {
    pub fn t_max(&self) -> usize {
        self.word_ids.len()
    }

    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.n_real() == 0
    }
}

/// Whitespace word split, per-word character split, truncation beyond
/// `t_max`/`c_max`, unknowns mapped to UNK. An empty string tokenizes to an
/// all-PAD text with an empty mask rather than an error.
pub fn tokenize(
    text: &str,
    vocab: &Vocabulary,
    t_max: usize,
    c_max: usize,
) -> Result<TokenizedText> {
    if t_max == 0 {
        return Err(Error::config("t_max", "must be >= 1"));
    }
    if c_max == 0 {
        return Err(Error::config("c_max", "must be >= 1"));
    }
    let mut word_ids = vec![PAD; t_max];
    let mut char_ids = vec![vec![PAD; c_max]; t_max];
    let mut mask = vec![false; t_max];
    for (t, word) in text.split_whitespace().take(t_max).enumerate() {
        word_ids[t] = vocab.word_id(word);
        mask[t] = true;
        for (k, c) in word.chars().take(c_max).enumerate() {
            char_ids[t][k] = vocab.char_id(c);
        }
    }
    Ok(TokenizedText {
        word_ids,
        char_ids,
        mask,
    })
}

/// Per-token embedding: `[word_embedding, mean(char_embeddings)]`.
/// Rows for padded positions are all-zero.
pub fn embed_tokens<S: Scalar>(
    tok: &TokenizedText,
    word_table: &Tensor<S>,
    char_table: &Tensor<S>,
) -> Result<Tensor<S>> {
    let d_w = word_table.cols();
    let d_c = char_table.cols();
    let t_max = tok.t_max();
    let mut out = Tensor::zeros(&[t_max, d_w + d_c]);
    for t in 0..t_max {
        if !tok.mask[t] {
            continue;
        }
        let wid = tok.word_ids[t] as usize;
        if wid >= word_table.rows() {
            return Err(Error::Internal(format!(
                "word id {wid} out of bounds for table of {} rows",
                word_table.rows()
            )));
        }
        let real_chars: Vec<usize> = tok.char_ids[t]
            .iter()
            .filter(|c| **c != PAD)
            .map(|c| *c as usize)
            .collect();
        let row = out.row_mut(t);
        row[..d_w].copy_from_slice(word_table.row(wid));
        if !real_chars.is_empty() {
            let inv = S::from_f64(1.0 / real_chars.len() as f64);
            for &cid in &real_chars {
                if cid >= char_table.rows() {
                    return Err(Error::Internal(format!(
                        "char id {cid} out of bounds for table of {} rows",
                        char_table.rows()
                    )));
                }
                for (o, v) in row[d_w..].iter_mut().zip(char_table.row(cid)) {
                    *o += inv * *v;
                }
            }
        }
    }
    Ok(out)
}
