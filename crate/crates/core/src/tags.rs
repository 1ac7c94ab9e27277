//! IOB tag set and conversion between tag sequences and entity spans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pharmacological entity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    #[serde(rename = "brand")]
    Brand,
    #[serde(rename = "drug")]
    Drug,
    #[serde(rename = "drug_n")]
    DrugN,
    #[serde(rename = "group")]
    Group,
}

impl EntityClass {
    /// Alphabetical order; this is the order of B-/I- pairs in [`TagSet`].
    pub const ALL: [EntityClass; 4] = [
        EntityClass::Brand,
        EntityClass::Drug,
        EntityClass::DrugN,
        EntityClass::Group,
    ];

    /// Row order of the corpus statistics table.
    pub const STATS_ORDER: [EntityClass; 4] = [
        EntityClass::DrugN,
        EntityClass::Group,
        EntityClass::Brand,
        EntityClass::Drug,
    ];

    /// Row order of the per-entity results table.
    pub const REPORT_ORDER: [EntityClass; 4] = [
        EntityClass::Group,
        EntityClass::Drug,
        EntityClass::Brand,
        EntityClass::DrugN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Brand => "brand",
            EntityClass::Drug => "drug",
            EntityClass::DrugN => "drug_n",
            EntityClass::Group => "group",
        }
    }

    fn ordinal(self) -> usize {
        match self {
            EntityClass::Brand => 0,
            EntityClass::Drug => 1,
            EntityClass::DrugN => 2,
            EntityClass::Group => 3,
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brand" => Ok(EntityClass::Brand),
            "drug" => Ok(EntityClass::Drug),
            "drug_n" => Ok(EntityClass::DrugN),
            "group" => Ok(EntityClass::Group),
            other => Err(Error::UnknownEntityClass(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(EntityClass),
    Inside(EntityClass),
}

impl Tag {
    /// Position in the standard tag set: `O`, then `B-X`/`I-X` pairs with `X`
    /// in alphabetical order.
    pub fn index(self) -> usize {
        match self {
            Tag::Outside => 0,
            Tag::Begin(c) => 1 + 2 * c.ordinal(),
            Tag::Inside(c) => 2 + 2 * c.ordinal(),
        }
    }

    pub fn from_index(index: usize) -> Result<Tag> {
        match index {
            0 => Ok(Tag::Outside),
            1..=8 => {
                let class = EntityClass::ALL[(index - 1) / 2];
                Ok(if index % 2 == 1 {
                    Tag::Begin(class)
                } else {
                    Tag::Inside(class)
                })
            }
            _ => Err(Error::invalid(format!(
                "tag index {index} out of range 0..9"
            ))),
        }
    }

    pub fn class(self) -> Option<EntityClass> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{c}"),
            Tag::Inside(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let unknown = || Error::UnknownTag(s.to_string());
        let (prefix, class) = s.split_once('-').ok_or_else(unknown)?;
        let class: EntityClass = class.parse().map_err(|_| unknown())?;
        match prefix {
            "B" => Ok(Tag::Begin(class)),
            "I" => Ok(Tag::Inside(class)),
            _ => Err(unknown()),
        }
    }
}

/// The ordered IOB tag inventory (9 tags).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<Tag>,
}

impl Default for TagSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl TagSet {
    pub fn standard() -> Self {
        let tags = (0..9)
            .map(|i| Tag::from_index(i).expect("index < 9"))
            .collect();
        Self { tags }
    }

    /// Rebuilds a tag set from its serialized listing; only the standard
    /// listing is accepted.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let standard = Self::standard();
        let matches = names.len() == standard.len()
            && names
                .iter()
                .zip(standard.names())
                .all(|(a, b)| a.as_ref() == b);
        if !matches {
            let got: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
            return Err(Error::invalid(format!(
                "tag set mismatch: expected [{}], got [{}]",
                standard.names().join(", "),
                got.join(", ")
            )));
        }
        Ok(standard)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn names(&self) -> Vec<String> {
        self.tags.iter().map(Tag::to_string).collect()
    }

    pub fn tag(&self, index: usize) -> Result<Tag> {
        self.tags.get(index).copied().ok_or_else(|| {
            Error::invalid(format!("tag index {index} out of range 0..{}", self.len()))
        })
    }

    /// Whether `next` may follow `prev` in a well-formed IOB sequence.
    /// `prev = None` is the sentence start.
    pub fn allows(prev: Option<Tag>, next: Tag) -> bool {
        match next {
            Tag::Inside(c) => matches!(prev, Some(Tag::Begin(p)) | Some(Tag::Inside(p)) if p == c),
            _ => true,
        }
    }
}

/// Entity occurrence over tokens `start..=end` of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub class: EntityClass,
}

impl EntitySpan {
    pub fn new(class: EntityClass, start: usize, end: usize) -> Self {
        Self { start, end, class }
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.class, self.start, self.end)
    }
}

pub fn parse_tags<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Tag>> {
    tags.iter().map(|t| t.as_ref().parse()).collect()
}

/// Extracts maximal entity spans ordered by start. An `I-X` that does not
/// continue an `X` entity opens a new span, as conlleval does.
pub fn iob_to_spans(tags: &[Tag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => spans.extend(open.take()),
            Tag::Begin(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(c, i, i));
            }
            Tag::Inside(c) => match open.as_mut() {
                Some(span) if span.class == c => span.end = i,
                _ => {
                    spans.extend(open.take());
                    open = Some(EntitySpan::new(c, i, i));
                }
            },
        }
    }
    spans.extend(open);
    spans
}

/// Renders spans as an IOB sequence of `length` tags.
pub fn spans_to_iob(spans: &[EntitySpan], length: usize) -> Result<Vec<Tag>> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    let mut tags = vec![Tag::Outside; length];
    let mut next_free = 0;
    for span in sorted {
        if span.start > span.end || span.end >= length {
            return Err(Error::invalid(format!(
                "span {span} out of bounds for sentence of length {length}"
            )));
        }
        if span.start < next_free {
            return Err(Error::invalid(format!(
                "span {span} overlaps a preceding span"
            )));
        }
        tags[span.start] = Tag::Begin(span.class);
        for tag in &mut tags[span.start + 1..=span.end] {
            *tag = Tag::Inside(span.class);
        }
        next_free = span.end + 1;
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EntityClass::*;

    const EXAMPLE_TAGS: [&str; 9] = [
        "B-drug", "O", "O", "O", "B-brand", "O", "B-group", "I-group", "I-group",
    ];

    #[test]
    fn standard_order() {
        assert_eq!(
            TagSet::standard().names(),
            [
                "O", "B-brand", "I-brand", "B-drug", "I-drug", "B-drug_n", "I-drug_n", "B-group",
                "I-group"
            ]
        );
        for (i, tag) in TagSet::standard().tags().iter().enumerate() {
            assert_eq!(tag.index(), i);
            assert_eq!(tag.to_string().parse::<Tag>().unwrap(), *tag);
        }
    }

    #[test]
    fn rejects_unknown_tags() {
        for bad in ["B-person", "X-drug", "b-drug", "", "B"] {
            assert!(
                matches!(bad.parse::<Tag>(), Err(Error::UnknownTag(_))),
                "{bad}"
            );
        }
        assert!(TagSet::from_names(&["O", "B-drug"]).is_err());
        assert!(TagSet::from_names(&TagSet::standard().names()).is_ok());
    }

    #[test]
    fn example_sentence_spans() {
        let tags = parse_tags(&EXAMPLE_TAGS).unwrap();
        let spans = iob_to_spans(&tags);
        assert_eq!(
            spans,
            vec![
                EntitySpan::new(Drug, 0, 0),
                EntitySpan::new(Brand, 4, 4),
                EntitySpan::new(Group, 6, 8)
            ]
        );
        assert_eq!(spans_to_iob(&spans, 9).unwrap(), tags);
    }

    #[test]
    fn edge_cases() {
        assert!(iob_to_spans(&[Tag::Outside; 4]).is_empty());
        let orphan = parse_tags(&["I-drug", "I-drug"]).unwrap();
        assert_eq!(iob_to_spans(&orphan), vec![EntitySpan::new(Drug, 0, 1)]);
        let switch = parse_tags(&["B-drug", "I-group", "B-group", "B-group"]).unwrap();
        assert_eq!(
            iob_to_spans(&switch),
            vec![
                EntitySpan::new(Drug, 0, 0),
                EntitySpan::new(Group, 1, 1),
                EntitySpan::new(Group, 2, 2),
                EntitySpan::new(Group, 3, 3)
            ]
        );
        assert_eq!(
            spans_to_iob(&[EntitySpan::new(Drug, 0, 0)], 3).unwrap(),
            parse_tags(&["B-drug", "O", "O"]).unwrap()
        );
        assert!(spans_to_iob(&[EntitySpan::new(Drug, 0, 3)], 3).is_err());
        assert!(spans_to_iob(
            &[EntitySpan::new(Drug, 0, 1), EntitySpan::new(Brand, 1, 2)],
            3
        )
        .is_err());
    }

    #[test]
    fn transition_rules() {
        assert!(!TagSet::allows(None, Tag::Inside(Drug)));
        assert!(!TagSet::allows(Some(Tag::Begin(Brand)), Tag::Inside(Group)));
        assert!(TagSet::allows(Some(Tag::Begin(Group)), Tag::Inside(Group)));
        assert!(TagSet::allows(Some(Tag::Inside(Group)), Tag::Inside(Group)));
        assert!(TagSet::allows(Some(Tag::Outside), Tag::Begin(Drug)));
    }

    fn arb_tags() -> impl Strategy<Value = Vec<Tag>> {
        prop::collection::vec((0usize..9).prop_map(|i| Tag::from_index(i).unwrap()), 0..20)
    }

    proptest! {
        #[test]
        fn iob_round_trip(tags in arb_tags()) {
            let spans = iob_to_spans(&tags);
            let canonical = spans_to_iob(&spans, tags.len()).unwrap();
            prop_assert_eq!(iob_to_spans(&canonical), spans.clone());
            prop_assert_eq!(spans_to_iob(&iob_to_spans(&canonical), tags.len()).unwrap(), canonical);
            for w in spans.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
        }
    }
}
