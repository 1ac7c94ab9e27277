//! Tagged corpora: the two-column IOB format, raw text, DDI XML conversion
//! and per-class statistics.

pub mod ddi;
pub mod tokenize;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tags::{iob_to_spans, EntityClass, Tag};

pub use ddi::{convert_ddi_dir, convert_ddi_str, convert_ddi_xml, Conversion};
pub use tokenize::{tokenize_with_offsets, Token};

/// Tokens of one sentence with optional gold (or predicted) tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Option<Vec<Tag>>,
}

impl Sentence {
    pub fn tagged(words: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::dims("tags per sentence", words.len(), tags.len()));
        }
        Ok(Self {
            words,
            tags: Some(tags),
        })
    }

    pub fn untagged(words: Vec<String>) -> Self {
        Self { words, tags: None }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Where the sentences came from, e.g. a file name or `DDI-MedLine`.
    pub provenance: String,
    /// Source document count, known only for converted XML.
    pub documents: Option<usize>,
}

impl Corpus {
    pub fn new(provenance: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Self {
            sentences,
            provenance: provenance.into(),
            documents: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_tagged(&self) -> bool {
        self.sentences.iter().all(|s| s.tags.is_some())
    }

    /// Concatenation; document counts add up when both are known.
    pub fn merge(mut self, other: Corpus) -> Corpus {
        self.sentences.extend(other.sentences);
        self.documents = match (self.documents, other.documents) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self
    }
}

fn provenance_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads `token<TAB>tag` lines; blank lines end sentences.
pub fn load_column_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    parse_column_corpus(&text, path)
}

/// As [`load_column_corpus`] on in-memory text; `path` only labels errors.
pub fn parse_column_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let (mut words, mut tags) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !words.is_empty() {
                sentences.push(Sentence::tagged(
                    std::mem::take(&mut words),
                    std::mem::take(&mut tags),
                )?);
            }
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 2 {
            return Err(parse_err(format!(
                "expected 2 fields (token, tag), found {}",
                fields.len()
            )));
        }
        let tag: Tag = fields[1]
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        words.push(fields[0].to_string());
        tags.push(tag);
    }
    if !words.is_empty() {
        sentences.push(Sentence::tagged(words, tags)?);
    }
    Ok(Corpus::new(provenance_of(path), sentences))
}

/// One sentence per non-blank line, tokenized with [`tokenize_with_offsets`].
pub fn load_raw_text(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let sentences = text
        .lines()
        .map(|line| {
            tokenize_with_offsets(line)
                .into_iter()
                .map(|t| t.text)
                .collect::<Vec<_>>()
        })
        .filter(|words| !words.is_empty())
        .map(Sentence::untagged)
        .collect();
    Ok(Corpus::new(provenance_of(path), sentences))
}

/// Writes the two-column format. Every sentence must carry tags.
pub fn write_column_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for (n, sentence) in corpus.sentences.iter().enumerate() {
        let tags = sentence
            .tags
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("sentence {} has no tags to write", n + 1)))?;
        if n > 0 {
            writeln!(out)?;
        }
        for (word, tag) in sentence.words.iter().zip(tags) {
            writeln!(out, "{word}\t{tag}")?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub provenance: String,
    pub documents: Option<usize>,
    pub sentences: usize,
    /// Span counts in `drug_n, group, brand, drug` order.
    pub spans: Vec<(EntityClass, usize)>,
}

impl CorpusStats {
    pub fn spans_of(&self, class: EntityClass) -> usize {
        self.spans
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(0, |(_, n)| *n)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.provenance);
        let docs = self
            .documents
            .map_or_else(|| "-".to_string(), |d| d.to_string());
        let _ = writeln!(out, "{:<10}{:>8}", "documents", docs);
        let _ = writeln!(out, "{:<10}{:>8}", "sentences", self.sentences);
        for (class, n) in &self.spans {
            let _ = writeln!(out, "{:<10}{:>8}", class.name(), n);
        }
        out
    }
}

/// Sentence count and entity spans per class. Untagged sentences count as
/// sentences only.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut counts = [0usize; 4];
    for tags in corpus.sentences.iter().filter_map(|s| s.tags.as_ref()) {
        for span in iob_to_spans(tags) {
            counts[EntityClass::ALL
                .iter()
                .position(|c| *c == span.class)
                .unwrap()] += 1;
        }
    }
    let spans = EntityClass::STATS_ORDER
        .iter()
        .map(|&c| {
            (
                c,
                counts[EntityClass::ALL.iter().position(|x| *x == c).unwrap()],
            )
        })
        .collect();
    CorpusStats {
        provenance: corpus.provenance.clone(),
        documents: corpus.documents,
        sentences: corpus.len(),
        spans,
    }
}
