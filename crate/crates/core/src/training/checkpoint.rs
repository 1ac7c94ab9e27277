//! Self-contained model file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "DRUGTAG\0"
//! version      u32
//! architecture u8       1 elman, 2 jordan, 3 bilstm-crf
//! hidden       u64
//! window       u64
//! embed dim    u64
//! learn rate   f64
//! dropout      f64
//! max epochs   u64
//! seed         u64
//! clip flag    u8, then f64 (0.0 when the flag is 0)
//! tags         u32 count, then strings
//! vocabulary   u64 count, then strings in index order
//! tensors      u32 count, then per tensor: name string, u64 rows, u64 cols,
//!              rows*cols f64 values in row-major order
//! ```
//!
//! A string is a u32 byte length followed by UTF-8 bytes. The first tensor
//! is `embeddings`; the rest follow [`Network::tensors`] order.

use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::crf::TransitionMask;
use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::models::{Architecture, Network, Tagger};
use crate::numeric::Matrix;
use crate::tags::{Tag, TagSet};

use super::{evaluate_tagger, HyperParams};

pub const MAGIC: &[u8; 8] = b"DRUGTAG\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyperparams: HyperParams,
    pub tag_set: TagSet,
    pub vocabulary: Vocabulary,
    pub tagger: Tagger,
}

impl Checkpoint {
    pub fn new(hyperparams: HyperParams, vocabulary: Vocabulary, tagger: Tagger) -> Result<Self> {
        let tag_set = TagSet::standard();
        let dims = tagger.dims();
        if dims != hyperparams.dims(tag_set.len()) {
            return Err(Error::Checkpoint(
                "model dimensions disagree with the hyperparameters".into(),
            ));
        }
        if tagger.embeddings().len() != vocabulary.len() {
            return Err(Error::Checkpoint(format!(
                "{} embedding rows for {} vocabulary entries",
                tagger.embeddings().len(),
                vocabulary.len()
            )));
        }
        Ok(Self {
            hyperparams,
            tag_set,
            vocabulary,
            tagger,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.tagger.architecture()
    }

    /// IOB well-formedness as a CRF decoding constraint.
    pub fn iob_mask(&self) -> TransitionMask {
        let tags = self.tag_set.tags();
        TransitionMask::from_fn(tags.len(), |prev, next| {
            TagSet::allows(prev.map(|p| tags[p]), tags[next])
        })
    }

    /// Tags one tokenized sentence. With `constrained`, BiLSTM-CRF decoding
    /// only follows IOB-legal bigrams.
    pub fn predict<S: AsRef<str>>(&self, words: &[S], constrained: bool) -> Result<Vec<Tag>> {
        let tokens = self.vocabulary.encode(words);
        let mask = constrained.then(|| self.iob_mask());
        self.tagger
            .predict_masked(&tokens, mask.as_ref())?
            .into_iter()
            .map(|i| self.tag_set.tag(i))
            .collect()
    }

    /// Strict span evaluation on a tagged corpus.
    pub fn evaluate(&self, corpus: &Corpus, constrained: bool) -> Result<EvalReport> {
        let mask = constrained.then(|| self.iob_mask());
        evaluate_tagger(corpus, |words| {
            let tokens = self.vocabulary.encode(words);
            self.tagger
                .predict_masked(&tokens, mask.as_ref())?
                .into_iter()
                .map(|i| self.tag_set.tag(i))
                .collect()
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.0.push(self.architecture().code());
        let hp = &self.hyperparams;
        w.u64(hp.hidden as u64);
        w.u64(hp.window as u64);
        w.u64(hp.embedding_dim as u64);
        w.f64(hp.learning_rate);
        w.f64(hp.dropout_rate);
        w.u64(hp.max_epochs as u64);
        w.u64(hp.seed);
        w.0.push(hp.clip_norm.is_some() as u8);
        w.f64(hp.clip_norm.unwrap_or(0.0));
        let names = self.tag_set.names();
        w.u32(names.len() as u32);
        names.iter().for_each(|n| w.str(n));
        w.u64(self.vocabulary.len() as u64);
        self.vocabulary.words().iter().for_each(|n| w.str(n));
        let network = self.tagger.network().tensors();
        w.u32(network.len() as u32 + 1);
        w.tensor("embeddings", self.tagger.embeddings().matrix());
        for (name, m) in network {
            w.tensor(name, m);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let arch = Architecture::from_code(r.take(1)?[0])?;
        let mut hp = HyperParams {
            hidden: r.usize()?,
            window: r.usize()?,
            embedding_dim: r.usize()?,
            learning_rate: r.f64()?,
            dropout_rate: r.f64()?,
            max_epochs: r.usize()?,
            seed: r.u64()?,
            clip_norm: None,
        };
        let has_clip = r.take(1)?[0];
        let clip = r.f64()?;
        hp.clip_norm = (has_clip != 0).then_some(clip);

        let n_tags = r.u32()? as usize;
        let names = (0..n_tags).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let tag_set = TagSet::from_names(&names).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n_words = r.usize()?;
        if n_words > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "vocabulary size {n_words} exceeds the file size"
            )));
        }
        let words = (0..n_words).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vocabulary =
            Vocabulary::from_words(words).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let dims = hp.dims(tag_set.len());
        let mut network = Network::zeros(arch, dims);
        let expected: Vec<&'static str> = network.tensors().iter().map(|(n, _)| *n).collect();
        let n_tensors = r.u32()? as usize;
        if n_tensors != expected.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {n_tensors}",
                expected.len() + 1
            )));
        }
        let embeddings = r.tensor("embeddings", vocabulary.len(), hp.embedding_dim)?;
        for (slot, name) in network.tensors_mut().into_iter().zip(expected) {
            let m = r.tensor(name, slot.rows(), slot.cols())?;
            *slot = m;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let tagger = Tagger::from_parts(dims, EmbeddingTable::from_matrix(embeddings), network)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Checkpoint::new(hp, vocabulary, tagger)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, m: &Matrix) {
        self.str(name);
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for v in m.as_slice() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let found = self.str()?;
        if found != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {found}"
            )));
        }
        let (r, c) = (self.usize()?, self.usize()?);
        if (r, c) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} is {r}x{c}, expected {rows}x{cols}"
            )));
        }
        let raw = self.take(
            r.checked_mul(c)
                .and_then(|n| n.checked_mul(8))
                .unwrap_or(usize::MAX),
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Matrix::from_vec(r, c, data)
    }
}
