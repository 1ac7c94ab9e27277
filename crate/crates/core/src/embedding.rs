//! Vocabulary, trainable word vectors, and context-window inputs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::{uniform_init, Matrix, SeededRng};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases and collapses every run of ASCII digits to a single `0`.
pub fn normalize_token(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut in_digits = false;
    for ch in word.chars() {
        if ch.is_ascii_digit() {
            if !in_digits {
                out.push('0');
            }
            in_digits = true;
        } else {
            in_digits = false;
            out.extend(ch.to_lowercase());
        }
    }
    out
}

/// Dense word index. Index 0 is `<pad>`, index 1 is `<unk>`, the rest follow
/// first-occurrence order of the (normalized) training tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I, S>(sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut vocab = Self::from_words(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])?;
        let mut any = false;
        for sentence in sentences {
            any = true;
            for word in sentence {
                let norm = normalize_token(word.as_ref());
                if !vocab.index.contains_key(&norm) {
                    vocab.index.insert(norm.clone(), vocab.words.len());
                    vocab.words.push(norm);
                }
            }
        }
        if !any {
            return Err(Error::Empty("vocabulary corpus"));
        }
        Ok(vocab)
    }

    /// Restores a vocabulary from its index-ordered word list.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[PAD] != PAD_TOKEN || words[UNK] != UNK_TOKEN {
            return Err(Error::invalid("vocabulary must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of `word` after normalization; unseen words map to [`UNK`].
    pub fn lookup(&self, word: &str) -> usize {
        self.index
            .get(&normalize_token(word))
            .copied()
            .unwrap_or(UNK)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|w| self.lookup(w.as_ref())).collect()
    }
}

/// One trainable `d`-vector per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Matrix,
}

impl EmbeddingTable {
    /// Rows drawn uniformly from `[-1, 1)`.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::invalid(
                "embedding table needs at least one row and column",
            ));
        }
        Ok(Self {
            vectors: uniform_init(vocab_size, dim, -1.0, 1.0, rng)?,
        })
    }

    pub fn from_matrix(vectors: Matrix) -> Self {
        Self { vectors }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn row(&self, index: usize) -> Result<&[f64]> {
        if index >= self.len() {
            return Err(Error::invalid(format!(
                "embedding index {index} out of range 0..{}",
                self.len()
            )));
        }
        Ok(self.vectors.row(index))
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        self.vectors.row_mut(index)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }
}

/// The `size` token indices centred on position `t`, padded with [`PAD`]
/// beyond either sentence edge.
pub fn context_window(sentence: &[usize], t: usize, size: usize) -> Result<Vec<usize>> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "window size must be odd and >= 1, got {size}"
        )));
    }
    if t >= sentence.len() {
        return Err(Error::invalid(format!(
            "position {t} out of range for sentence of length {}",
            sentence.len()
        )));
    }
    let half = (size / 2) as isize;
    Ok((-half..=half)
        .map(|offset| {
            let pos = t as isize + offset;
            if pos < 0 {
                PAD
            } else {
                sentence.get(pos as usize).copied().unwrap_or(PAD)
            }
        })
        .collect())
}

/// Concatenates the embedding rows of `window` into one `s·d` vector.
pub fn window_embed(window: &[usize], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(window.len() * table.dim());
    for &idx in window {
        out.extend_from_slice(table.row(idx)?);
    }
    Ok(out)
}
