//! Converter for the DDI corpus XML layout: `sentence` elements with a `text`
//! attribute and `entity` children carrying `type` and an inclusive
//! `charOffset` such as `"0-9"` or `"12-17;25-31"`.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::tokenize::tokenize_with_offsets;
use super::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::tags::{EntityClass, Tag};

/// A converted corpus plus everything that could not be mapped cleanly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

struct Candidate {
    order: usize,
    id: String,
    class: EntityClass,
    first: usize,
    last: usize,
    chars: usize,
}

fn xml_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Xml {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_offsets(offsets: &str) -> Option<Vec<(usize, usize)>> {
    offsets
        .split(';')
        .map(|frag| {
            let (a, b) = frag.trim().split_once('-')?;
            let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (a <= b).then_some((a, b))
        })
        .collect()
}

pub fn convert_ddi_xml(path: &Path) -> Result<Conversion> {
    let text = fs::read_to_string(path)?;
    convert_ddi_str(&text, path)
}

/// Converts every `*.xml` file under `dir` (recursively, in path order) and
/// concatenates the results.
pub fn convert_ddi_dir(dir: &Path) -> Result<Conversion> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a readable directory", dir.display()),
        )));
    }
    let mut files = Vec::new();
    collect_xml(dir, &mut files)?;
    files.sort();
    let mut merged = Conversion {
        corpus: Corpus {
            provenance: super::provenance_of(dir),
            documents: Some(0),
            ..Corpus::default()
        },
        warnings: Vec::new(),
    };
    if files.is_empty() {
        let msg = format!("no XML files under {}", dir.display());
        warn!("{msg}");
        merged.warnings.push(msg);
    }
    for file in files {
        let conv = convert_ddi_xml(&file)?;
        let provenance = std::mem::take(&mut merged.corpus.provenance);
        merged.corpus = merged.corpus.merge(conv.corpus);
        merged.corpus.provenance = provenance;
        merged.warnings.extend(conv.warnings);
    }
    Ok(merged)
}

fn collect_xml(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_xml(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Converts one XML document held in memory; `path` labels errors and
/// warnings.
pub fn convert_ddi_str(xml: &str, path: &Path) -> Result<Conversion> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| xml_err(path, e.to_string()))?;
    let mut warnings = Vec::new();
    let mut sentences = Vec::new();
    let documents = doc
        .descendants()
        .filter(|n| n.has_tag_name("document"))
        .count();

    for (n, node) in doc
        .descendants()
        .filter(|n| n.has_tag_name("sentence"))
        .enumerate()
    {
        let sid = node
            .attribute("id")
            .map_or_else(|| format!("sentence {}", n + 1), str::to_string);
        let text = node
            .attribute("text")
            .ok_or_else(|| xml_err(path, format!("{sid} has no text attribute")))?;
        let tokens = tokenize_with_offsets(text);
        if tokens.is_empty() {
            warnings.push(format!("{sid}: empty sentence skipped"));
            continue;
        }

        let mut candidates = Vec::new();
        for (order, ent) in node
            .children()
            .filter(|c| c.has_tag_name("entity"))
            .enumerate()
        {
            let eid = ent
                .attribute("id")
                .map_or_else(|| format!("{sid} entity {}", order + 1), str::to_string);
            let kind = ent
                .attribute("type")
                .ok_or_else(|| xml_err(path, format!("{eid} has no type attribute")))?;
            let class: EntityClass = kind.parse()?;
            let offsets = ent
                .attribute("charOffset")
                .ok_or_else(|| xml_err(path, format!("{eid} has no charOffset attribute")))?;
            let frags = parse_offsets(offsets)
                .ok_or_else(|| xml_err(path, format!("{eid}: bad charOffset `{offsets}`")))?;
            let (a, b) = frags[0];
            if frags.len() > 1 {
                warnings.push(format!(
                    "{sid}: {eid} is discontinuous (`{offsets}`), tagging only {a}-{b}"
                ));
            }
            let covered: Vec<usize> = (0..tokens.len())
                .filter(|&i| tokens[i].start <= b && tokens[i].end >= a)
                .collect();
            let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
                warnings.push(format!("{sid}: {eid} at {a}-{b} covers no token, dropped"));
                continue;
            };
            if tokens[first].start != a || tokens[last].end != b {
                warnings.push(format!(
                    "{sid}: {eid} at {a}-{b} does not align with token boundaries, tagging tokens {}-{}",
                    tokens[first].start, tokens[last].end
                ));
            }
            candidates.push(Candidate {
                order,
                id: eid,
                class,
                first,
                last,
                chars: b - a + 1,
            });
        }

        // longer entities claim tokens first; ties keep declaration order
        candidates.sort_by(|x, y| y.chars.cmp(&x.chars).then(x.order.cmp(&y.order)));
        let mut tags = vec![Tag::Outside; tokens.len()];
        let mut owner: Vec<Option<&str>> = vec![None; tokens.len()];
        for c in &candidates {
            if let Some(other) = owner[c.first..=c.last].iter().flatten().next() {
                warnings.push(format!("{sid}: {} overlaps {other}, dropped", c.id));
                continue;
            }
            for i in c.first..=c.last {
                owner[i] = Some(&c.id);
                tags[i] = if i == c.first {
                    Tag::Begin(c.class)
                } else {
                    Tag::Inside(c.class)
                };
            }
        }
        let words = tokens.into_iter().map(|t| t.text).collect();
        sentences.push(Sentence::tagged(words, tags)?);
    }

    for w in &warnings {
        warn!("{}: {w}", path.display());
    }
    let mut corpus = Corpus::new(super::provenance_of(path), sentences);
    corpus.documents = Some(documents);
    Ok(Conversion { corpus, warnings })
}
